//! Synthetic transaction worlds with cluster-structured MCC semantics.
//!
//! MCCs are grouped into clusters whose knowledge-base descriptions share a
//! keyword block, and user behavior follows a Markov chain over clusters that
//! favors same-cluster successors. Semantic proximity in the KB text is
//! therefore tied to behavioral proximity in the log.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Transaction, TransactionLog, TxnError, MONTH_SECS};
use crate::fusion::{KnowledgeBase, LocationEntry, MccEntry};

/// 2022-01-01T00:00:00Z; start of month 1 for generated logs.
pub const LOG_EPOCH: i64 = 1_640_995_200;

/// z-score of the 99th percentile of a standard normal.
const Z_Q99: f64 = 2.326_347_874;

const COUNTRY_LONG: &str = "UNITED STATES OF AMERICA";
const COUNTRY_RAW: &str = "USA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_clusters: usize,
    pub mccs_per_cluster: usize,
    pub n_merchants: usize,
    pub n_cities: usize,
    pub n_regions: usize,
    /// Minimum probability mass a cluster keeps on itself.
    pub same_cluster_margin: f64,
    /// Chance that a same-cluster step moves to the MCC's fixed successor.
    pub mcc_successor_prob: f64,
    pub anomaly_rate: f64,
    /// Rate at which the raw MCC field is blank or garbage.
    pub field_null_rate: f64,
    /// Share of merchants that only open at `cold_start_month`.
    pub cold_merchant_fraction: f64,
    /// Zero-based month index at which cold-start merchants open.
    pub cold_start_month: u32,
    pub home_city_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_clusters: 4,
            mccs_per_cluster: 5,
            n_merchants: 300,
            n_cities: 12,
            n_regions: 4,
            same_cluster_margin: 0.6,
            mcc_successor_prob: 0.6,
            anomaly_rate: 0.02,
            field_null_rate: 0.15,
            cold_merchant_fraction: 0.1,
            cold_start_month: 21,
            home_city_prob: 0.7,
        }
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<(), TxnError> {
        let sizes = [
            ("n_clusters", self.n_clusters),
            ("mccs_per_cluster", self.mccs_per_cluster),
            ("n_merchants", self.n_merchants),
            ("n_cities", self.n_cities),
            ("n_regions", self.n_regions),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(TxnError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.n_clusters > 60 || self.mccs_per_cluster > 99 {
            return Err(TxnError::Config("at most 60 clusters of 99 MCCs fit the code space".into()));
        }
        let probs = [
            ("same_cluster_margin", self.same_cluster_margin),
            ("mcc_successor_prob", self.mcc_successor_prob),
            ("anomaly_rate", self.anomaly_rate),
            ("field_null_rate", self.field_null_rate),
            ("cold_merchant_fraction", self.cold_merchant_fraction),
            ("home_city_prob", self.home_city_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(TxnError::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCluster {
    pub theme: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMcc {
    pub code: String,
    pub cluster: usize,
    pub title: String,
    pub log_mean: f64,
    pub log_sd: f64,
    /// Index into `mccs` of the planted same-cluster successor.
    pub successor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCity {
    pub name: String,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMerchant {
    pub name: String,
    pub mcc: usize,
    pub city: usize,
    pub cold_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub clusters: Vec<WorldCluster>,
    pub mccs: Vec<WorldMcc>,
    pub cities: Vec<WorldCity>,
    pub merchants: Vec<WorldMerchant>,
    /// Row-stochastic cluster transition matrix.
    pub transitions: Vec<Vec<f64>>,
    pub kb: KnowledgeBase,
}

impl SyntheticWorld {
    pub fn cluster_of_code(&self, code: &str) -> Option<usize> {
        self.mccs.iter().find(|m| m.code == code).map(|m| m.cluster)
    }

    pub fn cold_start_ts(&self) -> i64 {
        LOG_EPOCH + i64::from(self.config.cold_start_month) * MONTH_SECS
    }

    pub fn cold_merchant_names(&self) -> Vec<&str> {
        self.merchants.iter().filter(|m| m.cold_start).map(|m| m.name.as_str()).collect()
    }
}

struct Theme {
    name: &'static str,
    adjective: &'static str,
    keywords: [&'static str; 5],
    subcategories: &'static [(&'static str, &'static str)],
}

const THEMES: &[Theme] = &[
    Theme {
        name: "dining",
        adjective: "Hospitality",
        keywords: ["food", "beverages", "dining", "meals", "restaurant"],
        subcategories: &[
            ("Cafes and Coffee Houses", "espresso pastries"),
            ("Pizzerias", "pizza calzones"),
            ("Noodle Bars", "ramen dumplings"),
            ("Steakhouses", "grilled steaks"),
            ("Juice Bars", "smoothies juices"),
            ("Diners", "breakfast burgers"),
            ("Food Trucks", "street tacos"),
            ("Sushi Counters", "sushi sashimi"),
        ],
    },
    Theme {
        name: "travel",
        adjective: "Travel",
        keywords: ["travel", "transportation", "trips", "tickets", "passengers"],
        subcategories: &[
            ("Regional Airlines", "flights boarding"),
            ("Passenger Railways", "rail fares"),
            ("Boutique Hotels", "rooms suites"),
            ("Car Rental Agencies", "rental cars"),
            ("Cruise Lines", "cruise cabins"),
            ("Intercity Bus Lines", "coach fares"),
            ("Hostels", "dormitory beds"),
            ("Tour Operators", "guided tours"),
        ],
    },
    Theme {
        name: "retail",
        adjective: "Retail",
        keywords: ["retail", "merchandise", "shopping", "apparel", "stores"],
        subcategories: &[
            ("Shoe Boutiques", "sneakers boots"),
            ("Jewelry Stores", "rings watches"),
            ("Department Stores", "cosmetics housewares"),
            ("Outlet Stores", "discount brands"),
            ("Toy Stores", "games puzzles"),
            ("Sporting Goods Stores", "bicycles fitness"),
            ("Home Furnishing Stores", "lamps rugs"),
            ("Bookshops", "novels magazines"),
        ],
    },
    Theme {
        name: "health",
        adjective: "Healthcare",
        keywords: ["health", "medical", "care", "wellness", "patients"],
        subcategories: &[
            ("Pharmacies", "prescriptions medicines"),
            ("Dental Offices", "cleanings fillings"),
            ("Walk-in Clinics", "checkups vaccines"),
            ("Optical Shops", "eyeglasses lenses"),
            ("Physiotherapy Centers", "rehabilitation massage"),
            ("Diagnostic Laboratories", "bloodwork imaging"),
            ("Veterinary Clinics", "pets vaccinations"),
            ("Chiropractors", "spinal adjustments"),
        ],
    },
    Theme {
        name: "automotive",
        adjective: "Automotive",
        keywords: ["automotive", "vehicles", "fuel", "repair", "motorists"],
        subcategories: &[
            ("Gas Stations", "gasoline diesel"),
            ("Auto Repair Shops", "brakes engines"),
            ("Car Washes", "detailing wax"),
            ("Tire Dealers", "tires alignment"),
            ("Auto Parts Stores", "batteries filters"),
            ("Parking Garages", "parking spaces"),
            ("EV Charging Stations", "charging kilowatts"),
            ("Towing Services", "roadside towing"),
        ],
    },
    Theme {
        name: "home",
        adjective: "Household",
        keywords: ["home", "household", "maintenance", "contractors", "utilities"],
        subcategories: &[
            ("Plumbing Contractors", "pipes drains"),
            ("Electricians", "wiring outlets"),
            ("Hardware Stores", "tools fasteners"),
            ("Cleaning Services", "housekeeping laundry"),
            ("Landscapers", "lawns gardens"),
            ("Utility Providers", "electricity water"),
            ("Pest Control", "extermination traps"),
            ("Locksmiths", "locks keys"),
        ],
    },
    Theme {
        name: "entertainment",
        adjective: "Leisure",
        keywords: ["entertainment", "recreation", "leisure", "events", "audiences"],
        subcategories: &[
            ("Movie Theaters", "films screenings"),
            ("Concert Venues", "live music"),
            ("Bowling Alleys", "lanes bowling"),
            ("Amusement Parks", "rides attractions"),
            ("Streaming Services", "subscriptions episodes"),
            ("Museums", "exhibits galleries"),
            ("Golf Courses", "greens tee"),
            ("Arcades", "tokens prizes"),
        ],
    },
    Theme {
        name: "education",
        adjective: "Educational",
        keywords: ["education", "tuition", "learning", "courses", "students"],
        subcategories: &[
            ("Tutoring Centers", "homework coaching"),
            ("Language Schools", "grammar conversation"),
            ("Music Lessons", "piano violin"),
            ("Driving Schools", "lessons permits"),
            ("Coding Bootcamps", "programming projects"),
            ("Art Studios", "painting ceramics"),
            ("Test Prep Services", "exams practice"),
            ("Online Academies", "webinars certificates"),
        ],
    },
];

const REGIONS: &[&str] = &[
    "Michigan", "New York", "California", "Texas", "Illinois", "Florida", "Ohio", "Georgia",
    "Washington", "Colorado", "Arizona", "Oregon",
];

const CITY_NAMES: &[&str] = &[
    "Troy", "Buffalo", "Fresno", "Austin", "Peoria", "Tampa", "Dayton", "Macon", "Spokane",
    "Boulder", "Tucson", "Eugene", "Lansing", "Albany", "Oakland", "Houston", "Joliet", "Orlando",
    "Akron", "Athens", "Tacoma", "Aurora", "Mesa", "Salem",
];

const BRANDS: &[&str] = &[
    "MAPLE", "SUMMIT", "RIVERSIDE", "BLUE OAK", "CEDAR", "PIONEER", "HARBOR", "LIBERTY", "GOLDEN",
    "NORTHSTAR", "UNION", "METRO", "PRAIRIE", "LAKESIDE", "KEYSTONE", "SILVER",
];

fn oxford(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [a] => (*a).to_string(),
        [a, b] => format!("{a} and {b}"),
        [rest @ .., last] => format!("{}, and {last}", rest.join(", ")),
    }
}

fn theme_for(c: usize) -> (String, String, Vec<String>) {
    match THEMES.get(c) {
        Some(t) => (
            t.name.to_string(),
            t.adjective.to_string(),
            t.keywords.iter().map(|s| s.to_string()).collect(),
        ),
        None => (
            format!("theme{c}"),
            format!("Sector{c}"),
            (0..5).map(|k| format!("sector{c}word{k}")).collect(),
        ),
    }
}

fn subcategory(c: usize, i: usize) -> (String, String) {
    THEMES
        .get(c)
        .and_then(|t| t.subcategories.get(i))
        .map(|(title, focus)| (title.to_string(), focus.to_string()))
        .unwrap_or_else(|| (format!("Specialty Vendors {c}-{i}"), format!("specialty{c}x{i} goods{c}x{i}")))
}

fn city_name(i: usize) -> String {
    let base = CITY_NAMES[i % CITY_NAMES.len()];
    if i < CITY_NAMES.len() {
        base.to_string()
    } else {
        format!("{base} {}", i / CITY_NAMES.len() + 1)
    }
}

fn region_name(i: usize) -> String {
    let base = REGIONS[i % REGIONS.len()];
    if i < REGIONS.len() {
        base.to_string()
    } else {
        format!("{base} {}", i / REGIONS.len() + 1)
    }
}

fn transition_matrix(n: usize, margin: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = w.iter().sum();
            (0..n)
                .map(|j| {
                    let spread = (1.0 - margin) * w[j] / total;
                    if i == j {
                        margin + spread
                    } else {
                        spread
                    }
                })
                .collect()
        })
        .collect()
}

pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld, TxnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut clusters = Vec::with_capacity(config.n_clusters);
    let mut mccs = Vec::new();
    let mut kb = KnowledgeBase::default();
    for c in 0..config.n_clusters {
        let (theme, adjective, keywords) = theme_for(c);
        let base_log_mean = rng.random_range(8f64.ln()..150f64.ln());
        let first = mccs.len();
        let codes: Vec<String> =
            (0..config.mccs_per_cluster).map(|i| format!("{}", 3000 + 100 * c + i)).collect();
        for (i, code) in codes.iter().enumerate() {
            let (title, focus) = subcategory(c, i);
            let kw: Vec<&str> = keywords.iter().map(String::as_str).collect();
            let description = format!(
                "{} merchants offering {} with a focus on {}",
                adjective.to_lowercase(),
                oxford(&kw),
                focus
            );
            let similar: Vec<String> = (1..config.mccs_per_cluster.min(4))
                .map(|k| codes[(i + k) % codes.len()].clone())
                .collect();
            kb.mcc.insert(
                code.clone(),
                MccEntry {
                    title: title.clone(),
                    short_title: None,
                    description,
                    included_categories: focus.split(' ').map(str::to_string).collect(),
                    similar_codes: Some(similar),
                    related_merchants: Vec::new(),
                },
            );
            let log_mean: f64 = base_log_mean + 0.3 * rng.sample::<f64, _>(StandardNormal);
            mccs.push(WorldMcc {
                code: code.clone(),
                cluster: c,
                title,
                log_mean,
                log_sd: rng.random_range(0.3..0.7),
                successor: first + (i + 1) % config.mccs_per_cluster,
            });
        }
        clusters.push(WorldCluster { theme, keywords });
    }

    let regions: Vec<String> = (0..config.n_regions).map(region_name).collect();
    for r in &regions {
        kb.locations.push(LocationEntry {
            country: COUNTRY_LONG.to_string(),
            region: r.clone(),
            economic_context: Some(format!("regional economy of {r}")),
            demographics: Some(format!("resident population of {r}")),
            industries: Some(format!("leading industries of {r}")),
        });
    }
    let cities: Vec<WorldCity> = (0..config.n_cities)
        .map(|i| WorldCity { name: city_name(i), region: regions[i % regions.len()].clone() })
        .collect();
    for c in &cities {
        kb.cities.insert(c.name.clone(), c.region.clone());
    }

    // Round-robin over a shuffled MCC order so every MCC gets merchants.
    let mut order: Vec<usize> = (0..mccs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut merchants: Vec<WorldMerchant> = (0..config.n_merchants)
        .map(|k| {
            let mcc = order[k % order.len()];
            let city = rng.random_range(0..cities.len());
            let brand = BRANDS.choose(&mut rng).expect("brands");
            let (_, focus) = subcategory(mccs[mcc].cluster, mcc - mccs[mcc].cluster * config.mccs_per_cluster);
            let word = focus.split(' ').next().unwrap_or("goods").to_uppercase();
            WorldMerchant { name: format!("{brand} {word} {:04}", k + 1), mcc, city, cold_start: false }
        })
        .collect();

    let target_cold = (config.cold_merchant_fraction * config.n_merchants as f64).round() as usize;
    let mut warm_per_mcc = vec![0usize; mccs.len()];
    for m in &merchants {
        warm_per_mcc[m.mcc] += 1;
    }
    let mut pick: Vec<usize> = (0..merchants.len()).collect();
    for i in (1..pick.len()).rev() {
        pick.swap(i, rng.random_range(0..=i));
    }
    let mut n_cold = 0;
    for k in pick {
        if n_cold == target_cold {
            break;
        }
        let m = &mut merchants[k];
        if warm_per_mcc[m.mcc] >= 2 {
            m.cold_start = true;
            warm_per_mcc[m.mcc] -= 1;
            n_cold += 1;
        }
    }

    let transitions = transition_matrix(config.n_clusters, config.same_cluster_margin, &mut rng);
    Ok(SyntheticWorld { config: config.clone(), seed, clusters, mccs, cities, merchants, transitions, kb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogConfig {
    pub n_users: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub months: u32,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self { n_users: 2000, seq_len_min: 20, seq_len_max: 60, months: 24 }
    }
}

fn weighted_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn round_cents(x: f64) -> f64 {
    ((x * 100.0).round() / 100.0).max(0.01)
}

struct User {
    home_city: usize,
    cluster_pref: Vec<f64>,
    mcc_pref: Vec<f64>,
}

pub fn generate_log(world: &SyntheticWorld, cfg: &LogConfig, seed: u64) -> Result<TransactionLog, TxnError> {
    if world.mccs.is_empty() || world.merchants.is_empty() || world.cities.is_empty() {
        return Err(TxnError::Config("world has no MCCs, merchants or cities".into()));
    }
    if cfg.n_users == 0 || cfg.months == 0 {
        return Err(TxnError::Config("n_users and months must be >= 1".into()));
    }
    if cfg.seq_len_min == 0 || cfg.seq_len_min > cfg.seq_len_max {
        return Err(TxnError::Config(format!(
            "invalid sequence length range [{}, {}]",
            cfg.seq_len_min, cfg.seq_len_max
        )));
    }
    let wc = &world.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_106);
    let window = i64::from(cfg.months) * MONTH_SECS;
    let cold_ts = world.cold_start_ts();
    let n_clusters = world.clusters.len();

    let mut by_mcc: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, m) in world.merchants.iter().enumerate() {
        by_mcc.entry(m.mcc).or_default().push(k);
    }

    let mut out = Vec::new();
    for u in 0..cfg.n_users {
        let user = User {
            home_city: rng.random_range(0..world.cities.len()),
            cluster_pref: (0..n_clusters).map(|_| rng.random::<f64>().powi(2) + 0.05).collect(),
            mcc_pref: (0..world.mccs.len()).map(|_| rng.random_range(0.2f64..1.0).powi(2)).collect(),
        };
        let user_id = format!("u{:05}", u + 1);
        let n = rng.random_range(cfg.seq_len_min..=cfg.seq_len_max);
        let mut stamps: Vec<i64> = (0..n).map(|_| LOG_EPOCH + rng.random_range(0..window)).collect();
        stamps.sort_unstable();

        let mut state: Option<(usize, usize)> = None;
        for ts in stamps {
            let draw_mcc = |c: usize, rng: &mut ChaCha8Rng| {
                let idx: Vec<usize> = (0..world.mccs.len()).filter(|&i| world.mccs[i].cluster == c).collect();
                let w: Vec<f64> = idx.iter().map(|&i| user.mcc_pref[i]).collect();
                idx[weighted_index(&w, rng)]
            };
            let (cluster, mcc) = match state {
                None => {
                    let c = weighted_index(&user.cluster_pref, &mut rng);
                    (c, draw_mcc(c, &mut rng))
                }
                Some((c, m)) => {
                    let next = weighted_index(&world.transitions[c], &mut rng);
                    if next == c && rng.random::<f64>() < wc.mcc_successor_prob {
                        (c, world.mccs[m].successor)
                    } else {
                        (next, draw_mcc(next, &mut rng))
                    }
                }
            };

            let open = |k: &usize| !world.merchants[*k].cold_start || ts >= cold_ts;
            let mut pool: Vec<usize> = by_mcc.get(&mcc).into_iter().flatten().copied().filter(open).collect();
            if pool.is_empty() {
                pool = (0..world.merchants.len())
                    .filter(|k| world.mccs[world.merchants[*k].mcc].cluster == cluster)
                    .filter(open)
                    .collect();
            }
            if pool.is_empty() {
                pool = (0..world.merchants.len()).filter(open).collect();
            }
            if pool.is_empty() {
                continue;
            }
            if rng.random::<f64>() < wc.home_city_prob {
                let local: Vec<usize> =
                    pool.iter().copied().filter(|k| world.merchants[*k].city == user.home_city).collect();
                if !local.is_empty() {
                    pool = local;
                }
            }
            let weights: Vec<f64> =
                pool.iter().map(|k| if world.merchants[*k].cold_start { 3.0 } else { 1.0 }).collect();
            let merchant = &world.merchants[pool[weighted_index(&weights, &mut rng)]];
            let mcc = merchant.mcc;
            state = Some((world.mccs[mcc].cluster, mcc));

            let params = &world.mccs[mcc];
            let mut city = merchant.city;
            let mut amount = (params.log_mean + params.log_sd * rng.sample::<f64, _>(StandardNormal)).exp();
            let anomaly = rng.random::<f64>() < wc.anomaly_rate;
            if anomaly {
                if world.cities.len() > 1 && rng.random::<bool>() {
                    let shift = rng.random_range(1..world.cities.len());
                    city = (city + shift) % world.cities.len();
                } else {
                    let tail: f64 = rng.sample(Exp1);
                    amount = (params.log_mean + params.log_sd * (Z_Q99 + 0.5 + tail)).exp();
                }
            }

            let mcc_raw = if rng.random::<f64>() < wc.field_null_rate {
                ["", "N/A", "0"].choose(&mut rng).expect("non-empty").to_string()
            } else {
                params.code.clone()
            };
            let merchant_raw = match rng.random_range(0..20) {
                0 => format!("  {}  ", merchant.name),
                1 => merchant.name.replacen(' ', "  ", 1),
                _ => merchant.name.clone(),
            };
            out.push(Transaction {
                user_id: user_id.clone(),
                ts,
                amount: round_cents(amount),
                merchant_raw,
                mcc: mcc_raw,
                city: world.cities[city].name.clone(),
                state_or_region: world.cities[city].region.clone(),
                country: COUNTRY_RAW.to_string(),
                anomaly,
            });
        }
    }
    TransactionLog::new(out)
}
