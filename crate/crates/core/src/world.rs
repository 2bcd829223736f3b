//! Synthetic outfit worlds, ingestion of external embedding files, and
//! world persistence.
//!
//! Item embeddings are
//! `category_base[k] + style_center[s] + jitter[s][k] + noise`. An outfit takes one item per category from a single style,
//! preferring items whose noise points the same way as an outfit-level
//! anchor, so members of an outfit agree beyond their shared style.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experts::{BprTriple, QualityRubric};
use crate::rng;
use crate::sampler::EncoderBank;

const MODULE: &str = "datakit";
pub const WORLD_FORMAT: &str = "outfit-dpo-world";
pub const WORLD_VERSION: u32 = 1;

pub const DEFAULT_CATEGORIES: [&str; 4] = ["top", "bottom", "shoes", "accessory"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub categories: usize,
    pub styles: usize,
    pub items: usize,
    pub outfits: usize,
    pub users: usize,
    pub dim: usize,
    pub prompt_dim: usize,
    /// Per-item Gaussian noise scale around its (style, category) center.
    pub noise: f64,
    pub category_spread: f64,
    pub style_spread: f64,
    /// Outfits each user has interacted with.
    pub history_outfits: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            categories: 4,
            styles: 6,
            items: 600,
            outfits: 300,
            users: 50,
            dim: 8,
            prompt_dim: 8,
            noise: 0.1,
            category_spread: 2.0,
            style_spread: 1.0,
            history_outfits: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub category: usize,
    pub embedding: Vec<f64>,
    /// Known for generated worlds only.
    pub style: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outfit {
    pub id: String,
    pub item_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    /// Category name to past item ids.
    pub history: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub categories: Vec<String>,
    pub items: Vec<Item>,
    pub outfits: Vec<Outfit>,
    pub users: Vec<User>,
    pub prototypes: Vec<Vec<f64>>,
    pub quality_cutoff: f64,
    pub encoders: EncoderBank,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for World {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.categories == other.categories
            && self.items == other.items
            && self.outfits == other.outfits
            && self.users == other.users
            && self.prototypes == other.prototypes
            && self.quality_cutoff == other.quality_cutoff
            && self.encoders == other.encoders
    }
}

/// Per-category mean embeddings and a cutoff of three times the RMS
/// distance of items to their category mean.
fn prototypes_and_cutoff(items: &[Item], categories: usize, dim: usize) -> (Vec<Vec<f64>>, f64) {
    let mut sums = vec![vec![0.0; dim]; categories];
    let mut counts = vec![0usize; categories];
    for it in items {
        counts[it.category] += 1;
        sums[it.category].iter_mut().zip(&it.embedding).for_each(|(a, b)| *a += b);
    }
    let protos: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    let ss: f64 = items
        .iter()
        .map(|it| {
            it.embedding
                .iter()
                .zip(&protos[it.category])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    let rms = (ss / items.len().max(1) as f64).sqrt();
    let cutoff = if rms > 0.0 { 3.0 * rms } else { 1.0 };
    (protos, cutoff)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl World {
    fn from_parts(
        config: WorldConfig,
        seed: u64,
        categories: Vec<String>,
        items: Vec<Item>,
        outfits: Vec<Outfit>,
        users: Vec<User>,
        encoders: EncoderBank,
    ) -> Self {
        let (prototypes, quality_cutoff) = prototypes_and_cutoff(&items, categories.len(), config.dim);
        let mut w = Self {
            config,
            seed,
            categories,
            items,
            outfits,
            users,
            prototypes,
            quality_cutoff,
            encoders,
            index: HashMap::new(),
        };
        w.reindex();
        w
    }

    fn reindex(&mut self) {
        self.index = self.items.iter().enumerate().map(|(i, it)| (it.id.clone(), i)).collect();
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn embedding(&self, id: &str) -> Result<&[f64]> {
        self.item(id).map(|it| it.embedding.as_slice()).ok_or_else(|| Error::Integrity {
            record: "lookup".into(),
            id: id.to_string(),
        })
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn category_name(&self, k: usize) -> &str {
        &self.categories[k]
    }

    /// The item filling category `k` of outfit `o`.
    pub fn outfit_item(&self, o: usize, k: usize) -> Result<&Item> {
        self.outfits[o]
            .item_ids
            .iter()
            .filter_map(|id| self.item(id))
            .find(|it| it.category == k)
            .ok_or_else(|| Error::Schema {
                module: MODULE,
                msg: format!("outfit {} has no item of category {k}", self.outfits[o].id),
            })
    }

    /// Embeddings of every member of outfit `o` except category `k`.
    pub fn partial_outfit(&self, o: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for id in &self.outfits[o].item_ids {
            let it = self.item(id).ok_or_else(|| Error::Integrity {
                record: format!("outfit {}", self.outfits[o].id),
                id: id.clone(),
            })?;
            if it.category != k {
                out.push(it.embedding.clone());
            }
        }
        Ok(out)
    }

    /// Embeddings of user `u`'s past items in category `k`.
    pub fn user_history(&self, u: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        let name = &self.categories[k];
        self.users[u]
            .history
            .get(name)
            .map(|ids| ids.iter().map(|id| self.embedding(id).map(<[f64]>::to_vec)).collect())
            .unwrap_or_else(|| Ok(Vec::new()))
    }

    /// The user whose per-category history means sit closest to the outfit.
    pub fn user_for_outfit(&self, o: usize) -> Result<usize> {
        if self.users.is_empty() {
            return Err(Error::EmptyInput { module: MODULE });
        }
        let members: Vec<&Item> = self.outfits[o].item_ids.iter().filter_map(|id| self.item(id)).collect();
        let mut best = (f64::INFINITY, 0usize);
        for u in 0..self.users.len() {
            let mut cost = 0.0;
            for it in &members {
                let hist = self.user_history(u, it.category)?;
                if hist.is_empty() {
                    cost += 1e6;
                    continue;
                }
                let mean = crate::experts::vbpr::mean_vec(&hist)?;
                cost += dist2(&mean, &it.embedding);
            }
            if cost < best.0 {
                best = (cost, u);
            }
        }
        Ok(best.1)
    }

    /// Seeded split of outfit indices into (train, held-out).
    pub fn split(&self, heldout_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..1.0).contains(&heldout_fraction) {
            return Err(Error::param(MODULE, "held-out fraction must be in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.outfits.len()).collect();
        idx.shuffle(&mut rng::rng(seed, &[rng::tag("split")]));
        let n_held = (heldout_fraction * idx.len() as f64).round() as usize;
        let held = idx.split_off(idx.len() - n_held);
        let mut train = idx;
        train.sort_unstable();
        let mut held = held;
        held.sort_unstable();
        Ok((train, held))
    }

    /// BPR triples for every slot of the given outfits with `negatives`
    /// same-category random items that are not members of the outfit.
    pub fn bpr_triples(&self, outfits: &[usize], negatives: usize, seed: u64) -> Result<Vec<BprTriple>> {
        let mut by_cat: Vec<Vec<usize>> = vec![Vec::new(); self.n_categories()];
        for (i, it) in self.items.iter().enumerate() {
            by_cat[it.category].push(i);
        }
        let mut r = rng::rng(seed, &[rng::tag("bpr-triples")]);
        let mut out = Vec::new();
        for &o in outfits {
            let members: HashSet<&str> = self.outfits[o].item_ids.iter().map(String::as_str).collect();
            for k in 0..self.n_categories() {
                let pos = self.outfit_item(o, k)?;
                let partial = self.partial_outfit(o, k)?;
                if partial.is_empty() {
                    continue;
                }
                let outfit = crate::experts::vbpr::mean_vec(&partial)?;
                let pool: Vec<usize> = by_cat[k]
                    .iter()
                    .copied()
                    .filter(|&i| !members.contains(self.items[i].id.as_str()))
                    .collect();
                if pool.is_empty() {
                    continue;
                }
                for _ in 0..negatives {
                    let &neg = pool.choose(&mut r).expect("nonempty pool");
                    out.push(BprTriple {
                        positive: pos.embedding.clone(),
                        negative: self.items[neg].embedding.clone(),
                        outfit: outfit.clone(),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn quality_rubric(&self) -> Result<QualityRubric> {
        QualityRubric::new(self.prototypes.clone(), self.quality_cutoff)
    }

    /// Checks referential integrity of outfits and histories.
    pub fn validate(&self) -> Result<()> {
        let cats: HashSet<&str> = self.categories.iter().map(String::as_str).collect();
        for it in &self.items {
            if it.embedding.len() != self.config.dim {
                return Err(Error::Schema {
                    module: MODULE,
                    msg: format!("item {} has dimension {}, expected {}", it.id, it.embedding.len(), self.config.dim),
                });
            }
        }
        for o in &self.outfits {
            let mut seen = HashSet::new();
            for id in &o.item_ids {
                let it = self.item(id).ok_or_else(|| Error::Integrity {
                    record: format!("outfit {}", o.id),
                    id: id.clone(),
                })?;
                if !seen.insert(it.category) {
                    return Err(Error::Schema {
                        module: MODULE,
                        msg: format!("outfit {} has two items of category {}", o.id, self.categories[it.category]),
                    });
                }
            }
            if seen.len() != self.categories.len() {
                return Err(Error::Schema {
                    module: MODULE,
                    msg: format!("outfit {} does not cover every category", o.id),
                });
            }
        }
        for u in &self.users {
            for (cat, ids) in &u.history {
                if !cats.contains(cat.as_str()) {
                    return Err(Error::Schema {
                        module: MODULE,
                        msg: format!("user {} has history in unknown category '{cat}'", u.id),
                    });
                }
                for id in ids {
                    if self.item(id).is_none() {
                        return Err(Error::Integrity {
                            record: format!("user {}", u.id),
                            id: id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    let (c, s, d) = (cfg.categories, cfg.styles, cfg.dim);
    if c == 0 || cfg.items == 0 || cfg.outfits == 0 || cfg.users == 0 || d == 0 {
        return Err(Error::param(MODULE, "world counts must be positive"));
    }
    if s < 2 {
        return Err(Error::param(MODULE, "need at least two styles"));
    }
    if cfg.items < c * s {
        return Err(Error::param(
            MODULE,
            format!("{} items cannot cover {c} categories x {s} styles", cfg.items),
        ));
    }
    if cfg.noise < 0.0 || cfg.history_outfits == 0 {
        return Err(Error::param(MODULE, "noise must be nonnegative and history_outfits positive"));
    }
    // items i -> category i % c, style (i / c) % s
    let mut cluster_sizes = vec![vec![0usize; c]; s];
    for i in 0..cfg.items {
        cluster_sizes[(i / c) % s][i % c] += 1;
    }
    let combos: f64 = cluster_sizes
        .iter()
        .map(|row| row.iter().map(|&n| n as f64).product::<f64>())
        .sum();
    if cfg.outfits as f64 > combos {
        return Err(Error::param(
            MODULE,
            format!("{} outfits exceed the {combos} distinct within-style combinations", cfg.outfits),
        ));
    }

    let mut r = rng::rng(seed, &[rng::tag("world")]);
    let base: Vec<Vec<f64>> = (0..c)
        .map(|_| rng::normal_vec(&mut r, d).into_iter().map(|v| v * cfg.category_spread).collect())
        .collect();
    let centers: Vec<Vec<f64>> = (0..s)
        .map(|_| rng::normal_vec(&mut r, d).into_iter().map(|v| v * cfg.style_spread).collect())
        .collect();
    let cluster_mean: Vec<Vec<Vec<f64>>> = (0..s)
        .map(|st| {
            (0..c)
                .map(|k| {
                    let jit = rng::normal_vec(&mut r, d);
                    (0..d)
                        .map(|i| base[k][i] + centers[st][i] + 0.3 * cfg.style_spread * jit[i])
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut categories: Vec<String> = DEFAULT_CATEGORIES.iter().take(c).map(|s| s.to_string()).collect();
    for k in categories.len()..c {
        categories.push(format!("category{k}"));
    }

    let mut items = Vec::with_capacity(cfg.items);
    let mut members: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); c]; s];
    for i in 0..cfg.items {
        let (k, st) = (i % c, (i / c) % s);
        let z = rng::normal_vec(&mut r, d);
        let embedding = (0..d).map(|j| cluster_mean[st][k][j] + cfg.noise * z[j]).collect();
        members[st][k].push(i);
        items.push(Item {
            id: format!("i{i}"),
            category: k,
            embedding,
            style: Some(st),
        });
    }

    let mut used: HashSet<Vec<usize>> = HashSet::new();
    let mut outfits = Vec::with_capacity(cfg.outfits);
    let mut outfit_styles = Vec::with_capacity(cfg.outfits);
    let mut outfit_members: Vec<Vec<usize>> = Vec::with_capacity(cfg.outfits);
    for o in 0..cfg.outfits {
        let st = o % s;
        let mut chosen = None;
        for attempt in 0..64 {
            let pick: Vec<usize> = if attempt < 16 {
                let anchor: Vec<f64> = rng::normal_vec(&mut r, d).into_iter().map(|v| v * cfg.noise).collect();
                (0..c)
                    .map(|k| {
                        let offset = |i: usize| -> Vec<f64> {
                            items[i].embedding.iter().zip(&cluster_mean[st][k]).map(|(a, b)| a - b).collect()
                        };
                        *members[st][k]
                            .iter()
                            .min_by(|&&a, &&b| {
                                dist2(&offset(a), &anchor).total_cmp(&dist2(&offset(b), &anchor))
                            })
                            .expect("nonempty cluster")
                    })
                    .collect()
            } else {
                (0..c).map(|k| *members[st][k].choose(&mut r).expect("nonempty cluster")).collect()
            };
            if used.insert(pick.clone()) {
                chosen = Some(pick);
                break;
            }
        }
        let pick = chosen.ok_or_else(|| Error::param(MODULE, format!("could not assemble a distinct outfit {o}")))?;
        outfits.push(Outfit {
            id: format!("o{o}"),
            item_ids: pick.iter().map(|&i| items[i].id.clone()).collect(),
        });
        outfit_styles.push(st);
        outfit_members.push(pick);
    }

    let mut by_style: Vec<Vec<usize>> = vec![Vec::new(); s];
    for (o, &st) in outfit_styles.iter().enumerate() {
        by_style[st].push(o);
    }
    let mut users = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let n_pref = r.random_range(1..=2usize);
        let mut styles: Vec<usize> = (0..s).collect();
        styles.shuffle(&mut r);
        styles.truncate(n_pref);
        let mut pool: Vec<usize> = styles.iter().flat_map(|&st| by_style[st].iter().copied()).collect();
        pool.sort_unstable();
        pool.shuffle(&mut r);
        let mut picked: Vec<usize> = pool.iter().copied().take(cfg.history_outfits).collect();
        while picked.len() < cfg.history_outfits {
            picked.push(*pool.choose(&mut r).expect("styles own outfits"));
        }
        let mut history = BTreeMap::new();
        for (k, name) in categories.iter().enumerate() {
            let ids = picked.iter().map(|&o| items[outfit_members[o][k]].id.clone()).collect();
            history.insert(name.clone(), ids);
        }
        users.push(User {
            id: format!("u{u}"),
            history,
        });
    }

    let encoders = EncoderBank::generate(d, cfg.prompt_dim, c, seed);
    Ok(World::from_parts(cfg.clone(), seed, categories, items, outfits, users, encoders))
}

#[derive(Serialize, Deserialize)]
struct ItemRecord {
    id: String,
    category: String,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OutfitRecord {
    id: String,
    item_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct UserRecord {
    id: String,
    history: BTreeMap<String, Vec<String>>,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            module: MODULE,
            msg: format!("{}:{}: {e}", path.display(), n + 1),
        })?);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Builds a world from line-delimited item, outfit and user files.
pub fn ingest_external(items_path: &Path, outfits_path: &Path, users_path: &Path, seed: u64) -> Result<World> {
    let item_recs: Vec<ItemRecord> = read_lines(items_path)?;
    let outfit_recs: Vec<OutfitRecord> = read_lines(outfits_path)?;
    let user_recs: Vec<UserRecord> = read_lines(users_path)?;
    let dim = item_recs
        .first()
        .map(|r| r.embedding.len())
        .ok_or(Error::EmptyInput { module: MODULE })?;
    let mut categories: Vec<String> = Vec::new();
    let mut items = Vec::with_capacity(item_recs.len());
    for rec in item_recs {
        if rec.embedding.len() != dim {
            return Err(Error::Schema {
                module: MODULE,
                msg: format!("item {} has dimension {}, expected {dim}", rec.id, rec.embedding.len()),
            });
        }
        if rec.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema {
                module: MODULE,
                msg: format!("item {} has a non-finite embedding", rec.id),
            });
        }
        let category = match categories.iter().position(|c| *c == rec.category) {
            Some(k) => k,
            None => {
                categories.push(rec.category.clone());
                categories.len() - 1
            }
        };
        items.push(Item {
            id: rec.id,
            category,
            embedding: rec.embedding,
            style: None,
        });
    }
    let outfits = outfit_recs
        .into_iter()
        .map(|r| Outfit {
            id: r.id,
            item_ids: r.item_ids,
        })
        .collect();
    let users = user_recs
        .into_iter()
        .map(|r| User {
            id: r.id,
            history: r.history,
        })
        .collect();
    let config = WorldConfig {
        categories: categories.len(),
        dim,
        prompt_dim: dim,
        ..WorldConfig::default()
    };
    let encoders = EncoderBank::generate(dim, dim, categories.len(), seed);
    let w = World::from_parts(config, seed, categories, items, outfits, users, encoders);
    w.validate()?;
    Ok(w)
}

/// Writes `items.jsonl`, `outfits.jsonl` and `users.jsonl` under `dir`.
pub fn export_external(world: &World, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let items: Vec<ItemRecord> = world
        .items
        .iter()
        .map(|it| ItemRecord {
            id: it.id.clone(),
            category: world.categories[it.category].clone(),
            embedding: it.embedding.clone(),
        })
        .collect();
    let outfits: Vec<OutfitRecord> = world
        .outfits
        .iter()
        .map(|o| OutfitRecord {
            id: o.id.clone(),
            item_ids: o.item_ids.clone(),
        })
        .collect();
    let users: Vec<UserRecord> = world
        .users
        .iter()
        .map(|u| UserRecord {
            id: u.id.clone(),
            history: u.history.clone(),
        })
        .collect();
    write_lines(&dir.join("items.jsonl"), &items)?;
    write_lines(&dir.join("outfits.jsonl"), &outfits)?;
    write_lines(&dir.join("users.jsonl"), &users)
}

#[derive(Serialize, Deserialize)]
struct WorldHeader {
    format: String,
    version: u32,
    sha256: String,
    seed: u64,
    config_hash: String,
}

/// Two lines: a JSON header carrying version and body checksum, then the
/// world body as one JSON object.
pub fn save_world(world: &World, path: &Path, config_hash: &str) -> Result<()> {
    let body = serde_json::to_string(world)?;
    let header = WorldHeader {
        format: WORLD_FORMAT.into(),
        version: WORLD_VERSION,
        sha256: hex::encode(Sha256::digest(body.as_bytes())),
        seed: world.seed,
        config_hash: config_hash.into(),
    };
    let text = format!("{}\n{body}\n", serde_json::to_string(&header)?);
    crate::binio::write_file(path, text.as_bytes())
}

pub fn load_world(path: &Path) -> Result<World> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (head, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Corrupt(path.display().to_string()))?;
    let header: WorldHeader = serde_json::from_str(head).map_err(|_| Error::Corrupt(path.display().to_string()))?;
    if header.format != WORLD_FORMAT {
        return Err(Error::Schema {
            module: MODULE,
            msg: format!("{} is not a world file", path.display()),
        });
    }
    if header.version != WORLD_VERSION {
        return Err(Error::Version {
            what: path.display().to_string(),
            found: header.version,
            expected: WORLD_VERSION,
        });
    }
    let body = body.trim_end_matches('\n');
    if hex::encode(Sha256::digest(body.as_bytes())) != header.sha256 {
        return Err(Error::Corrupt(path.display().to_string()));
    }
    let mut w: World = serde_json::from_str(body)?;
    w.reindex();
    Ok(w)
}

/// Config hash stored in a world file header.
pub fn world_config_hash(path: &Path) -> Result<String> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = String::new();
    BufReader::new(f).read_line(&mut head).map_err(|e| Error::io(path, e))?;
    let h: WorldHeader = serde_json::from_str(&head).map_err(|_| Error::Corrupt(path.display().to_string()))?;
    Ok(h.config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            styles: 2,
            items: 80,
            outfits: 40,
            users: 6,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn generated_world_invariants() {
        let w = generate_world(&small(), 1).unwrap();
        w.validate().unwrap();
        assert_eq!(w.items.len(), 80);
        assert_eq!(w.outfits.len(), 40);
        for o in &w.outfits {
            assert_eq!(o.item_ids.len(), 4);
            let styles: HashSet<_> = o.item_ids.iter().map(|id| w.item(id).unwrap().style).collect();
            assert_eq!(styles.len(), 1);
        }
        for u in 0..w.users.len() {
            for k in 0..4 {
                assert!(w.user_history(u, k).unwrap().len() >= 5);
            }
        }
        let unique: HashSet<_> = w.outfits.iter().map(|o| o.item_ids.clone()).collect();
        assert_eq!(unique.len(), 40);
    }

    #[test]
    fn zero_noise_collapses_clusters() {
        let cfg = WorldConfig {
            noise: 0.0,
            ..small()
        };
        let w = generate_world(&cfg, 2).unwrap();
        for a in &w.items {
            for b in &w.items {
                if a.style == b.style && a.category == b.category {
                    assert_eq!(a.embedding, b.embedding);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&small(), 3).unwrap();
        let b = generate_world(&small(), 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_world(&small(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_counts_rejected() {
        let cfg = WorldConfig {
            items: 8,
            styles: 2,
            outfits: 5,
            ..small()
        };
        // one item per (style, category): only 2 distinct outfits exist
        assert!(matches!(generate_world(&cfg, 0), Err(Error::Parameter { .. })));
        let one_style = WorldConfig { styles: 1, ..small() };
        assert!(generate_world(&one_style, 0).is_err());
    }

    #[test]
    fn clusters_separate_with_margin() {
        // exhaustive pairwise distances within one category
        let w = generate_world(&small(), 5).unwrap();
        for k in 0..4 {
            let its: Vec<&Item> = w.items.iter().filter(|i| i.category == k).collect();
            let (mut within, mut cross) = (0.0f64, f64::INFINITY);
            for a in &its {
                for b in &its {
                    let d = dist2(&a.embedding, &b.embedding).sqrt();
                    if a.style == b.style {
                        within = within.max(d);
                    } else {
                        cross = cross.min(d);
                    }
                }
            }
            assert!(cross > within, "category {k}: cross {cross} within {within}");
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let w = generate_world(&small(), 1).unwrap();
        let (tr, ho) = w.split(0.25, 9).unwrap();
        assert_eq!(tr.len() + ho.len(), 40);
        assert_eq!(ho.len(), 10);
        assert!(tr.iter().all(|o| !ho.contains(o)));
        assert_eq!(w.split(0.25, 9).unwrap(), (tr, ho));
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&small(), 1).unwrap();
        let p = dir.path().join("w.jsonl");
        save_world(&w, &p, "abc").unwrap();
        let back = load_world(&p).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.item("i3"), w.item("i3"));
        assert_eq!(world_config_hash(&p).unwrap(), "abc");

        let mut text = fs::read_to_string(&p).unwrap();
        let pos = text.rfind("0.").unwrap();
        text.replace_range(pos..pos + 2, "1.");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_world(&p), Err(Error::Corrupt(_))));

        assert!(matches!(save_world(&w, Path::new(""), "x"), Err(Error::Io { .. })));
        assert!(matches!(load_world(Path::new("")), Err(Error::Io { .. })));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&small(), 1).unwrap();
        let p = dir.path().join("w.jsonl");
        save_world(&w, &p, "h").unwrap();
        let text = fs::read_to_string(&p).unwrap().replacen("\"version\":1", "\"version\":9", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(load_world(&p), Err(Error::Version { found: 9, .. })));
    }
}
