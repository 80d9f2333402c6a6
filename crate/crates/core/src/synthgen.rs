//! Deterministic synthetic catalogs and multi-scenario watch logs.
//!
//! Items belong to topics with topic-specific keyword and tag vocabularies.
//! Users carry a Dirichlet(0.3) topic preference. Each scenario exposes
//! topics with its own weights, ranks items by its own popularity order and
//! withholds a fraction of the catalog from every other scenario, which is
//! what produces scenario-wise exposure bias in the log.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal};

use crate::graph_builder::InteractionRecord;
use crate::{Error, Result};

/// 2021-07-01T00:00:00Z; day `d` of a generated log starts at `BASE_TIMESTAMP + d * 86400`.
pub const BASE_TIMESTAMP: i64 = 1_625_097_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

const KEYWORDS_PER_TOPIC: usize = 6;
const TAGS_PER_TOPIC: usize = 2;
const DIRICHLET_ALPHA: f64 = 0.3;
const TOPIC_STAY_PROB: f64 = 0.85;
const BOUNCE_PROB: f64 = 0.083;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemMeta {
    pub item_id: String,
    pub keyword: String,
    pub tag: String,
    pub duration_s: u32,
    pub topic: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioProfile {
    pub scenario_id: String,
    /// Unnormalized exposure weight per topic.
    pub exposure_distribution: Vec<f64>,
    /// Fraction of the catalog never shown in any other scenario.
    pub exclusive_item_fraction: f64,
    pub sessions_per_user_per_day: u32,
    /// Zipf exponent of the scenario's item popularity order.
    pub popularity_exponent: f64,
}

impl ScenarioProfile {
    fn validate(&self, n_topics: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scenario `{}`: {m}", self.scenario_id)));
        if self.exposure_distribution.len() != n_topics {
            return bad("exposure distribution length must equal topic count");
        }
        if self.exposure_distribution.iter().any(|w| !w.is_finite() || *w < 0.0)
            || !self.exposure_distribution.iter().any(|w| *w > 0.0)
        {
            return bad("exposure weights must be nonnegative with at least one positive");
        }
        if !(0.0..=1.0).contains(&self.exclusive_item_fraction) {
            return bad("exclusive_item_fraction must lie in [0, 1]");
        }
        if self.sessions_per_user_per_day == 0 {
            return bad("sessions_per_user_per_day must be >= 1");
        }
        if !self.popularity_exponent.is_finite() || self.popularity_exponent < 0.0 {
            return bad("popularity_exponent must be finite and >= 0");
        }
        Ok(())
    }
}

/// Two opposed scenarios: `feed` leans on the second half of the topics,
/// `home` on the first half.
pub fn standard_profiles(n_topics: usize, exclusive_item_fraction: f64) -> Vec<ScenarioProfile> {
    let lean = |first: bool| {
        (0..n_topics)
            .map(|t| if (t < n_topics / 2) == first { 1.0 } else { 0.35 })
            .collect()
    };
    vec![
        ScenarioProfile {
            scenario_id: "feed".into(),
            exposure_distribution: lean(false),
            exclusive_item_fraction,
            sessions_per_user_per_day: 2,
            popularity_exponent: 1.5,
        },
        ScenarioProfile {
            scenario_id: "home".into(),
            exposure_distribution: lean(true),
            exclusive_item_fraction,
            sessions_per_user_per_day: 2,
            popularity_exponent: 1.5,
        },
    ]
}

pub fn generate_catalog(n_items: usize, n_topics: usize, seed: u64) -> Result<Vec<ItemMeta>> {
    if n_items == 0 || n_topics == 0 || n_items < n_topics {
        return Err(Error::InvalidArgument(format!(
            "need n_items >= n_topics >= 1 (got {n_items} items, {n_topics} topics)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // round-robin then shuffle: every topic gets floor or ceil of n/T items
    let mut topics: Vec<u32> = (0..n_items).map(|i| (i % n_topics) as u32).collect();
    topics.shuffle(&mut rng);
    let duration = LogNormal::new(120f64.ln(), 0.8).expect("valid lognormal");
    Ok(topics
        .into_iter()
        .enumerate()
        .map(|(i, topic)| {
            let kw = rng.random_range(0..KEYWORDS_PER_TOPIC);
            let tag = rng.random_range(0..TAGS_PER_TOPIC);
            let d: f64 = duration.sample(&mut rng);
            ItemMeta {
                item_id: format!("v{i:05}"),
                keyword: format!("t{topic}k{kw}"),
                tag: format!("t{topic}g{tag}"),
                duration_s: d.round().clamp(5.0, 3600.0) as u32,
                topic,
            }
        })
        .collect())
}

/// Per-scenario sampling tables.
struct Exposure {
    topic_items: Vec<Vec<usize>>,
    topic_cum: Vec<Vec<f64>>,
    topic_weight: Vec<f64>,
}

fn cumulative(ws: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    ws.map(|w| {
        acc += w;
        acc
    })
    .collect()
}

fn pick(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cum.last().expect("nonempty cumulative table");
    let x = rng.random::<f64>() * total;
    cum.partition_point(|&c| c <= x).min(cum.len() - 1)
}

pub fn generate_interactions(
    catalog: &[ItemMeta],
    profiles: &[ScenarioProfile],
    n_users: usize,
    n_days: usize,
    seed: u64,
) -> Result<Vec<InteractionRecord>> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("empty catalog".into()));
    }
    if profiles.is_empty() || n_users == 0 || n_days == 0 {
        return Err(Error::InvalidArgument("need >= 1 profile, user and day".into()));
    }
    let n_topics = catalog.iter().map(|m| m.topic as usize + 1).max().unwrap_or(1);
    for p in profiles {
        p.validate(n_topics)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = catalog.len();

    // exclusive chunks are carved from one shuffled order
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut cursor = 0;
    for (k, p) in profiles.iter().enumerate() {
        let take = ((p.exclusive_item_fraction * n as f64).floor() as usize).min(n - cursor);
        for &i in &order[cursor..cursor + take] {
            owner[i] = Some(k);
        }
        cursor += take;
    }

    let mut exposures = Vec::with_capacity(profiles.len());
    for (k, p) in profiles.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut popularity = vec![0.0; n];
        for (rank, &i) in perm.iter().enumerate() {
            popularity[i] = ((rank + 1) as f64).powf(-p.popularity_exponent);
        }
        let mut topic_items = vec![Vec::new(); n_topics];
        for (i, m) in catalog.iter().enumerate() {
            if owner[i].is_none_or(|o| o == k) {
                topic_items[m.topic as usize].push(i);
            }
        }
        let topic_cum: Vec<Vec<f64>> = topic_items
            .iter()
            .map(|items| cumulative(items.iter().map(|&i| popularity[i])))
            .collect();
        let topic_weight: Vec<f64> = (0..n_topics)
            .map(|t| if topic_items[t].is_empty() { 0.0 } else { p.exposure_distribution[t] })
            .collect();
        if !topic_weight.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scenario `{}` exposes no items",
                p.scenario_id
            )));
        }
        exposures.push(Exposure {
            topic_items,
            topic_cum,
            topic_weight,
        });
    }

    let gamma = Gamma::new(DIRICHLET_ALPHA, 1.0).expect("valid gamma");
    let engaged = Beta::new(5.0, 2.0).expect("valid beta");
    let bounce = Beta::new(1.0, 30.0).expect("valid beta");

    let mut records = Vec::new();
    for u in 0..n_users {
        let user_id = format!("u{u:05}");
        let mut pref: Vec<f64> = (0..n_topics).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = pref.iter().sum();
        if total > 0.0 {
            pref.iter_mut().for_each(|x| *x /= total);
        } else {
            pref = vec![1.0 / n_topics as f64; n_topics];
        }
        for day in 0..n_days {
            let day_start = BASE_TIMESTAMP + day as i64 * SECONDS_PER_DAY;
            for (k, p) in profiles.iter().enumerate() {
                let exp = &exposures[k];
                let mut topic_cum = cumulative((0..n_topics).map(|t| pref[t] * exp.topic_weight[t]));
                if *topic_cum.last().unwrap() <= 0.0 {
                    topic_cum = cumulative(exp.topic_weight.iter().copied());
                }
                let mut t = day_start + rng.random_range(0..4 * 3600);
                for session in 0..p.sessions_per_user_per_day {
                    if session > 0 {
                        t += rng.random_range(2 * 3600..4 * 3600);
                    }
                    let len = rng.random_range(3..=8);
                    let mut topic = pick(&topic_cum, &mut rng);
                    let mut prev = usize::MAX;
                    for step in 0..len {
                        if step > 0 {
                            t += if rng.random::<f64>() < 0.95 {
                                rng.random_range(20..900)
                            } else {
                                rng.random_range(3600..5400)
                            };
                            if rng.random::<f64>() >= TOPIC_STAY_PROB {
                                topic = pick(&topic_cum, &mut rng);
                            }
                        }
                        let items = &exp.topic_items[topic];
                        let mut item = items[pick(&exp.topic_cum[topic], &mut rng)];
                        if item == prev && items.len() > 1 {
                            item = items[pick(&exp.topic_cum[topic], &mut rng)];
                        }
                        prev = item;
                        let completion_rate = if rng.random::<f64>() < BOUNCE_PROB {
                            bounce.sample(&mut rng)
                        } else {
                            engaged.sample(&mut rng)
                        };
                        records.push(InteractionRecord {
                            user_id: user_id.clone(),
                            item_id: catalog[item].item_id.clone(),
                            scenario_id: p.scenario_id.clone(),
                            timestamp: t,
                            completion_rate,
                        });
                    }
                }
            }
        }
    }
    records.sort_by(|a, b| {
        (a.timestamp, &a.user_id, &a.scenario_id).cmp(&(b.timestamp, &b.user_id, &b.scenario_id))
    });
    Ok(records)
}

/// `timestamp < cutoff` goes to training, the rest to validation.
pub fn split_train_validation(
    records: &[InteractionRecord],
    cutoff_ts: i64,
) -> (Vec<InteractionRecord>, Vec<InteractionRecord>) {
    records.iter().cloned().partition(|r| r.timestamp < cutoff_ts)
}

/// Start of the last calendar day (UTC) touched by the log.
pub fn last_day_cutoff(records: &[InteractionRecord]) -> Option<i64> {
    records
        .iter()
        .map(|r| r.timestamp)
        .max()
        .map(|t| t.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY)
}

/// Catalog TSV: `item_id, keyword, tag, duration_s, topic`.
pub fn write_catalog<W: Write>(catalog: &[ItemMeta], mut w: W) -> Result<()> {
    for m in catalog {
        writeln!(w, "{}\t{}\t{}\t{}\t{}", m.item_id, m.keyword, m.tag, m.duration_s, m.topic)?;
    }
    Ok(())
}

pub fn read_catalog<R: BufRead>(reader: R) -> Result<Vec<ItemMeta>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let err = |field, message: String| Error::Parse {
            line: i + 1,
            field,
            message,
        };
        if f.len() != 5 {
            return Err(err("catalog", format!("expected 5 fields, found {}", f.len())));
        }
        let duration_s: u32 = f[3].parse().map_err(|e| err("duration_s", format!("`{}`: {e}", f[3])))?;
        if duration_s == 0 {
            return Err(err("duration_s", "must be >= 1".into()));
        }
        out.push(ItemMeta {
            item_id: f[0].into(),
            keyword: f[1].into(),
            tag: f[2].into(),
            duration_s,
            topic: f[4].parse().map_err(|e| err("topic", format!("`{}`: {e}", f[4])))?,
        });
    }
    Ok(out)
}

/// Parameters of the standard synthetic dataset used by the test suites.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub n_items: usize,
    pub n_topics: usize,
    pub n_users: usize,
    pub n_days: usize,
    pub exclusive_item_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_topics: 20,
            n_users: 500,
            n_days: 8,
            exclusive_item_fraction: 0.3,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<(Vec<ItemMeta>, Vec<InteractionRecord>)> {
        let catalog = generate_catalog(self.n_items, self.n_topics, self.seed)?;
        let profiles = standard_profiles(self.n_topics, self.exclusive_item_fraction);
        let records = generate_interactions(&catalog, &profiles, self.n_users, self.n_days, self.seed)?;
        Ok((catalog, records))
    }
}
