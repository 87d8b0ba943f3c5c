//! Bundled databases: a small hand-sized e-commerce schema and a seeded
//! generator of user/business/rating databases with planted cohorts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::CohortRule;
use crate::error::Result;
use crate::relational::AttributeValue::{self, Category, Key, Number, Text, Timestamp};
use crate::relational::{ColumnKind, ColumnSpec, Database, Table};

const EPOCH_2023: i64 = 1_672_531_200;
const DAY: i64 = 86_400;

fn schema() -> (Table, Table, Table) {
    let user = Table::new(
        "USER",
        vec![
            ColumnSpec::new("user_id", ColumnKind::PrimaryKey),
            ColumnSpec::new("segment", ColumnKind::Categorical),
            ColumnSpec::new("region", ColumnKind::Categorical),
            ColumnSpec::new("age", ColumnKind::Numeric),
            ColumnSpec::new("joined", ColumnKind::Timestamp),
        ],
    );
    let biz = Table::new(
        "BIZ",
        vec![
            ColumnSpec::new("biz_id", ColumnKind::PrimaryKey),
            ColumnSpec::new("category", ColumnKind::Categorical),
            ColumnSpec::new("city", ColumnKind::Categorical),
            ColumnSpec::new("price", ColumnKind::Numeric),
            ColumnSpec::new("description", ColumnKind::Text),
            ColumnSpec::new("opened", ColumnKind::Timestamp),
        ],
    );
    let rate = Table::new(
        "RATE",
        vec![
            ColumnSpec::new("rate_id", ColumnKind::PrimaryKey),
            ColumnSpec::new("user_id", "fk:USER.user_id".parse().unwrap()),
            ColumnSpec::new("biz_id", "fk:BIZ.biz_id".parse().unwrap()),
            ColumnSpec::new("stars", ColumnKind::Numeric),
            ColumnSpec::new("created", ColumnKind::Timestamp),
        ],
    );
    (user, biz, rate)
}

const SEGMENTS: [&str; 4] = ["student", "family", "business", "retired"];
const REGIONS: [&str; 4] = ["north", "south", "east", "west"];
const CATEGORIES: [&str; 4] = ["cafe", "steakhouse", "bistro", "diner"];
const CITIES: [&str; 4] = ["lyon", "porto", "graz", "turku"];
const VOCAB: [&[&str]; 4] = [
    &["espresso", "pastry", "latte", "croissant", "wifi", "quiet"],
    &["steak", "grill", "ribeye", "wine", "smoky", "brisket"],
    &["seasonal", "terrace", "tasting", "menu", "chef", "natural"],
    &["burger", "pancakes", "milkshake", "breakfast", "fries", "booth"],
];

fn blurb(rng: &mut ChaCha8Rng, cohort: usize, words: usize) -> String {
    (0..words)
        .map(|_| *VOCAB[cohort % VOCAB.len()].choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// USER / RATE / BIZ with 12 users, 10 businesses and 28 ratings.
pub fn ecommerce() -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut user, mut biz, mut rate) = schema();
    for i in 0..12 {
        let c = i % 4;
        user.push_row(vec![
            Key(format!("u{i:02}")),
            Category(SEGMENTS[c].into()),
            Category(REGIONS[(i / 3) % 4].into()),
            Number((20 + 12 * c + rng.gen_range(0..8)) as f64),
            Timestamp(EPOCH_2023 + i as i64 * 9 * DAY),
        ]);
    }
    for i in 0..10 {
        let c = i % 4;
        biz.push_row(vec![
            Key(format!("b{i:02}")),
            Category(CATEGORIES[c].into()),
            Category(CITIES[(i * 3) % 4].into()),
            Number(8.0 + 9.5 * c as f64 + rng.gen_range(0..4) as f64),
            Text(blurb(&mut rng, c, 6)),
            Timestamp(EPOCH_2023 - (30 - i as i64) * DAY),
        ]);
    }
    for i in 0..28 {
        let u = i % 12;
        // mostly within the user's taste, a few outside it
        let b = if i % 7 == 6 { (u + 1) % 10 } else { (u % 4 + 4 * (i / 12)) % 10 };
        rate.push_row(vec![
            Key(format!("r{i:02}")),
            Key(format!("u{u:02}")),
            Key(format!("b{b:02}")),
            Number(rng.gen_range(1..=5) as f64),
            Timestamp(EPOCH_2023 + 120 * DAY + i as i64 * DAY),
        ]);
    }
    Database::from_tables(vec![user, biz, rate], "ecommerce/manifest.json").expect("fixture is valid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub cohorts: usize,
    pub users_per_cohort: usize,
    pub biz_per_cohort: usize,
    pub ratings_per_user: usize,
    /// Chance that a categorical attribute ignores the cohort.
    pub attribute_noise: f64,
    /// Chance that a rating goes to a business of a random cohort.
    pub rating_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            cohorts: 6,
            users_per_cohort: 40,
            biz_per_cohort: 20,
            ratings_per_user: 8,
            attribute_noise: 0.05,
            rating_noise: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub db: Database,
    pub user_cohort: Vec<usize>,
    pub biz_cohort: Vec<usize>,
}

impl Synthetic {
    /// Rules whose columns carry the planted signature.
    pub fn cohort_rules() -> Vec<CohortRule> {
        vec![
            CohortRule {
                table: "USER".into(),
                columns: vec!["segment".into()],
                name: None,
            },
            CohortRule {
                table: "BIZ".into(),
                columns: vec!["category".into()],
                name: None,
            },
        ]
    }
}

fn label(rng: &mut ChaCha8Rng, prefix: &str, cohort: usize, cohorts: usize, noise: f64) -> AttributeValue {
    let c = if rng.gen_bool(noise) { rng.gen_range(0..cohorts) } else { cohort };
    Category(format!("{prefix}{c}"))
}

/// Same schema as [`ecommerce`]; tuples of one cohort share segment/region
/// (users) or category/city (businesses), similar numbers and vocabulary,
/// and users rate businesses of their own cohort (apart from
/// `rating_noise`). The first user of
/// every cohort also rates a business of the next cohort, so the graph is
/// connected.
pub fn synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    let SyntheticSpec {
        cohorts,
        users_per_cohort,
        biz_per_cohort,
        ratings_per_user,
        attribute_noise,
        rating_noise,
        seed,
    } = *spec;
    let cohorts = cohorts.max(1);
    let noise = attribute_noise.clamp(0.0, 1.0);
    let rating_noise = rating_noise.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut user, mut biz, mut rate) = schema();

    let user_cohort: Vec<usize> = (0..cohorts * users_per_cohort).map(|i| i % cohorts).collect();
    let biz_cohort: Vec<usize> = (0..cohorts * biz_per_cohort).map(|i| i % cohorts).collect();

    for (i, &c) in user_cohort.iter().enumerate() {
        user.push_row(vec![
            Key(format!("u{i}")),
            label(&mut rng, "seg", c, cohorts, noise),
            label(&mut rng, "reg", c, cohorts, noise),
            Number((18 + 15 * c) as f64 + rng.gen_range(0.0..6.0_f64).round()),
            Timestamp(EPOCH_2023 + rng.gen_range(0..365) * DAY),
        ]);
    }
    for (i, &c) in biz_cohort.iter().enumerate() {
        biz.push_row(vec![
            Key(format!("b{i}")),
            label(&mut rng, "cat", c, cohorts, noise),
            label(&mut rng, "city", c, cohorts, noise),
            Number((5 + 20 * c) as f64 + rng.gen_range(0.0..4.0_f64).round()),
            Text(blurb(&mut rng, c, 8)),
            Timestamp(EPOCH_2023 - rng.gen_range(0..365) * DAY),
        ]);
    }

    let by_cohort: Vec<Vec<usize>> = (0..cohorts)
        .map(|c| (0..biz_cohort.len()).filter(|&b| biz_cohort[b] == c).collect())
        .collect();
    let mut next = 0usize;
    for (u, &c) in user_cohort.iter().enumerate() {
        let mut chosen = Vec::new();
        if u < cohorts && cohorts > 1 && !by_cohort[(c + 1) % cohorts].is_empty() {
            chosen.push(by_cohort[(c + 1) % cohorts][0]);
        }
        let mut attempts = 0;
        while chosen.len() < ratings_per_user && attempts < 20 * ratings_per_user.max(1) {
            attempts += 1;
            let pool = if rng.gen_bool(rating_noise) {
                &by_cohort[rng.gen_range(0..cohorts)]
            } else {
                &by_cohort[c]
            };
            if let Some(&b) = pool.choose(&mut rng) {
                if !chosen.contains(&b) {
                    chosen.push(b);
                }
            }
        }
        for b in chosen {
            rate.push_row(vec![
                Key(format!("r{next}")),
                Key(format!("u{u}")),
                Key(format!("b{b}")),
                Number(if biz_cohort[b] == c { rng.gen_range(4..=5) } else { rng.gen_range(1..=3) } as f64),
                Timestamp(EPOCH_2023 + 400 * DAY + next as i64 * 3600),
            ]);
            next += 1;
        }
    }

    Ok(Synthetic {
        db: Database::from_tables(vec![user, biz, rate], "synthetic/manifest.json")?,
        user_cohort,
        biz_cohort,
    })
}
