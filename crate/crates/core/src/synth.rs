//! Synthetic benchmark: products come in `bought_together` pairs and every
//! session ends by moving from one member of a pair to its partner.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Interaction, ItemMetadata};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Even number of products; product `2i` pairs with `2i + 1`.
    pub products: usize,
    pub brands: usize,
    pub categories: usize,
    pub related_pool: usize,
    pub users: usize,
    /// Sessions per ordered pair `(p, partner(p))`.
    pub sessions_per_pair: usize,
    pub max_prefix: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            products: 200,
            brands: 20,
            categories: 20,
            related_pool: 10,
            users: 100,
            sessions_per_pair: 5,
            max_prefix: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub interactions: Vec<Interaction>,
    pub metadata: Vec<ItemMetadata>,
}

pub fn product_name(i: usize) -> String {
    format!("p{i:03}")
}

pub fn partner(i: usize) -> usize {
    i ^ 1
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let n = config.products;
    let pairs = n / 2;
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!("synthetic product count {n} must be even and at least 4")));
    }
    if config.brands == 0 || config.categories == 0 || config.users == 0 || config.related_pool == 0 {
        return Err(Error::Config("synthetic brand, category, user and pool counts must be positive".into()));
    }
    if pairs % config.brands != 0 || pairs % config.categories != 0 {
        return Err(Error::Config(format!(
            "{pairs} pairs do not split evenly over {} brands and {} categories",
            config.brands, config.categories
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let per_brand = pairs / config.brands;
    let per_category = pairs / config.categories;
    let mut shuffled: Vec<usize> = (0..pairs).collect();
    shuffled.shuffle(&mut rng);
    let mut category_of = vec![0; pairs];
    for (pos, &pair) in shuffled.iter().enumerate() {
        category_of[pair] = pos / per_category;
    }
    // Partners share one `also_viewed` entity; pools smaller than the pair
    // count make several pairs share it.
    shuffled.shuffle(&mut rng);
    let mut related_of = vec![0; pairs];
    for (pos, &pair) in shuffled.iter().enumerate() {
        related_of[pair] = pos % config.related_pool;
    }
    let metadata = (0..n)
        .map(|i| ItemMetadata {
            item: product_name(i),
            brand: Some(format!("brand{:02}", (i / 2) / per_brand)),
            categories: vec![format!("cat{:02}", category_of[i / 2])],
            also_bought: Vec::new(),
            also_viewed: vec![format!("rel{:03}", related_of[i / 2])],
            bought_together: vec![product_name(partner(i))],
        })
        .collect();

    let mut next_day: HashMap<usize, i64> = HashMap::new();
    let mut interactions = Vec::new();
    for p in 0..n {
        let q = partner(p);
        for _ in 0..config.sessions_per_pair {
            let user = rng.gen_range(0..config.users);
            let day = next_day.entry(user).or_insert(0);
            let base = *day * 86_400;
            *day += 1;
            let prefix_len = rng.gen_range(1..=config.max_prefix.max(1));
            let mut items = Vec::with_capacity(prefix_len + 2);
            while items.len() < prefix_len {
                let x = rng.gen_range(0..n);
                if x != p && x != q && items.last() != Some(&x) {
                    items.push(x);
                }
            }
            items.push(p);
            items.push(q);
            for (j, &item) in items.iter().enumerate() {
                interactions.push(Interaction {
                    user_id: format!("u{user:03}"),
                    item_id: product_name(item),
                    timestamp: base + 60 * j as i64,
                });
            }
        }
    }
    interactions.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
    Ok(SynthData { interactions, metadata })
}

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const METADATA_FILE: &str = "metadata.jsonl";

/// Writes `interactions.tsv` and `metadata.jsonl` into `dir`, each led by a
/// `# fingerprint=` comment line.
pub fn write(data: &SynthData, dir: &Path, fingerprint: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let inter = dir.join(INTERACTIONS_FILE);
    let meta = dir.join(METADATA_FILE);
    let mut out = format!("# fingerprint={fingerprint}\n").into_bytes();
    for it in &data.interactions {
        writeln!(out, "{}\t{}\t{}", it.user_id, it.item_id, it.timestamp).expect("write to memory");
    }
    std::fs::write(&inter, out).map_err(|e| Error::io(&inter, e))?;
    let mut out = format!("# fingerprint={fingerprint}\n");
    for m in &data.metadata {
        out.push_str(&serde_json::to_string(m).expect("metadata serializes"));
        out.push('\n');
    }
    std::fs::write(&meta, out).map_err(|e| Error::io(&meta, e))?;
    Ok((inter, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_interactions_str, sessionize};

    #[test]
    fn sessions_end_with_partner_move() {
        let data = generate(&SynthConfig::default()).unwrap();
        let (sessions, summary) = sessionize(&data.interactions, 5, 2);
        assert_eq!(sessions.len(), 1000);
        assert_eq!(summary.dropped_rare_interactions, 0);
        for s in &sessions {
            let last: usize = s.last_item()[1..].parse().unwrap();
            let target: usize = s.target[1..].parse().unwrap();
            assert_eq!(partner(last), target);
            assert!((2..=3).contains(&s.items.len()));
        }
    }

    #[test]
    fn metadata_groups() {
        let data = generate(&SynthConfig::default()).unwrap();
        let mut brands: HashMap<String, usize> = HashMap::new();
        let mut cats: HashMap<String, usize> = HashMap::new();
        for (i, m) in data.metadata.iter().enumerate() {
            let other = &data.metadata[partner(i)];
            assert_eq!(m.brand, other.brand);
            assert_eq!(m.categories, other.categories);
            *brands.entry(m.brand.clone().unwrap()).or_default() += 1;
            *cats.entry(m.categories[0].clone()).or_default() += 1;
        }
        assert_eq!(brands.len(), 20);
        assert_eq!(cats.len(), 20);
        assert!(brands.values().chain(cats.values()).all(|&c| c == 10));
    }

    #[test]
    fn written_files_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&SynthConfig {
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let (inter, meta) = write(&data, dir.path(), "abc").unwrap();
        let text = std::fs::read_to_string(&inter).unwrap();
        assert_eq!(parse_interactions_str(&text, &inter).unwrap(), data.interactions);
        let meta = crate::ingest::parse_metadata(&meta).unwrap();
        assert_eq!(meta, data.metadata);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        let c = generate(&SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
