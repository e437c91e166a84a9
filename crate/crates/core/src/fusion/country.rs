struct CountryCode {
    names: &'static [&'static str],
    alpha3: &'static str,
}

// Subset of ISO 3166-1; extend as new markets show up in the logs.
const COUNTRY_CODES: &[CountryCode] = &[
    CountryCode {
        names: &["UNITED STATES OF AMERICA", "UNITED STATES", "USA", "US"],
        alpha3: "USA",
    },
    CountryCode { names: &["CANADA", "CAN", "CA"], alpha3: "CAN" },
    CountryCode { names: &["MEXICO", "MEX", "MX"], alpha3: "MEX" },
    CountryCode {
        names: &["UNITED KINGDOM", "GREAT BRITAIN", "GBR", "GB", "UK"],
        alpha3: "GBR",
    },
    CountryCode { names: &["GERMANY", "DEU", "DE"], alpha3: "DEU" },
    CountryCode { names: &["FRANCE", "FRA", "FR"], alpha3: "FRA" },
    CountryCode { names: &["SPAIN", "ESP", "ES"], alpha3: "ESP" },
    CountryCode { names: &["ITALY", "ITA", "IT"], alpha3: "ITA" },
    CountryCode { names: &["JAPAN", "JPN", "JP"], alpha3: "JPN" },
    CountryCode { names: &["CHINA", "CHN", "CN"], alpha3: "CHN" },
    CountryCode { names: &["INDIA", "IND", "IN"], alpha3: "IND" },
    CountryCode { names: &["BRAZIL", "BRA", "BR"], alpha3: "BRA" },
    CountryCode { names: &["AUSTRALIA", "AUS", "AU"], alpha3: "AUS" },
    CountryCode { names: &["SINGAPORE", "SGP", "SG"], alpha3: "SGP" },
];

/// Short display form of a country: ISO alpha-3 when known, otherwise the
/// input unchanged.
pub fn country_short(name: &str) -> String {
    let upper = name.trim().to_uppercase();
    COUNTRY_CODES
        .iter()
        .find(|c| c.names.contains(&upper.as_str()))
        .map(|c| c.alpha3.to_string())
        .unwrap_or_else(|| name.trim().to_string())
}
