//! Run configuration: a single TOML file whose `[protocol]` and `[toy]`
//! tables are partial and merged over the built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gmia_core::data::{cancer_like_dataset, generate_toy, load_csv, Dataset, Schema};
use gmia_core::eval::{ProtocolConfig, ToyConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_OUTPUT: &str = "gmia-out";
pub const OUTPUT_ROOT_ENV: &str = "GMIA_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// A CSV file described by a JSON schema.
    Csv { path: PathBuf, schema: PathBuf },
    /// The seeded 699-row stand-in for the breast-cancer table.
    CancerLike {
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    /// The two-feature toy problem.
    Toy {
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
}

fn default_data_seed() -> u64 {
    7
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::CancerLike { seed: default_data_seed() }
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetConfig::Csv { path, schema } => {
                let s = Schema::from_json_file(schema)?;
                load_csv(path, &s).with_context(|| format!("loading dataset {}", path.display()))
            }
            DatasetConfig::CancerLike { seed } => Ok(cancer_like_dataset(*seed)?),
            DatasetConfig::Toy { seed } => Ok(generate_toy(*seed)),
        }
    }

    /// Makes file paths absolute (relative to `base`) and checks they exist.
    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        if let DatasetConfig::Csv { path, schema } = self {
            for (what, p) in [("dataset", path), ("schema", schema)] {
                let joined = base.join(&*p);
                *p = joined
                    .canonicalize()
                    .with_context(|| format!("{what} file {} does not exist", joined.display()))?;
            }
        }
        Ok(())
    }
}

/// A fully resolved configuration; this is what gets snapshotted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage seed derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    pub toy: ToyConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// `dotted.key=value` assignments; values are parsed as TOML and fall
    /// back to plain strings.
    pub set: Vec<String>,
}

impl RunConfig {
    /// Reads `path` (or starts from an empty file), applies overrides, loads
    /// the dataset and fills in defaults.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<(RunConfig, Dataset)> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let table: Table = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Table::new(), PathBuf::new()),
        };
        for assignment in &overrides.set {
            apply_assignment(&mut table, assignment)?;
        }
        if let Some(seed) = overrides.seed {
            table.insert("seed".into(), Value::Integer(seed_to_toml(seed)?));
        }

        let allowed = ["seed", "output_dir", "dataset", "protocol", "toy"];
        if let Some(k) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
            bail!("unknown configuration key `{k}`");
        }
        let seed = match table.get("seed") {
            None => DEFAULT_SEED,
            Some(v) => u64::try_from(v.as_integer().context("`seed` must be an integer")?)
                .context("`seed` must be non-negative")?,
        };
        let mut dataset: DatasetConfig = match table.remove("dataset") {
            None => DatasetConfig::default(),
            Some(v) => v.try_into().context("invalid [dataset] table")?,
        };
        dataset.resolve_paths(&base)?;
        let data = dataset.load()?;

        let mut protocol: ProtocolConfig = merged(ProtocolConfig::cancer(data.dim()), table.remove("protocol"), "protocol")?;
        protocol.seed = seed;
        protocol.validate().context("invalid [protocol] table")?;
        let mut toy: ToyConfig = merged(ToyConfig::new(seed), table.remove("toy"), "toy")?;
        toy.seed = seed;

        let output_dir = match (&overrides.output_dir, table.get("output_dir")) {
            (Some(p), _) => p.clone(),
            (None, Some(v)) => PathBuf::from(v.as_str().context("`output_dir` must be a string")?),
            (None, None) => PathBuf::from(DEFAULT_OUTPUT),
        };
        let output_dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if output_dir.is_relative() => PathBuf::from(root).join(output_dir),
            _ => output_dir,
        };
        Ok((
            RunConfig {
                seed,
                output_dir,
                dataset,
                protocol,
                toy,
            },
            data,
        ))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing the resolved configuration")
    }
}

fn seed_to_toml(seed: u64) -> Result<i64> {
    i64::try_from(seed).with_context(|| format!("seed {seed} is too large (maximum {})", i64::MAX))
}

/// Deserializes `defaults` with the user's partial table merged over it.
fn merged<T>(defaults: T, user: Option<Value>, name: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut base = Value::try_from(&defaults).with_context(|| format!("serializing default [{name}]"))?;
    if let Some(u) = user {
        if !u.is_table() {
            bail!("`{name}` must be a table");
        }
        merge_into(&mut base, u);
    }
    base.try_into().with_context(|| format!("invalid [{name}] table"))
}

fn merge_into(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Table(b), Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(existing) => merge_into(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_assignment(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form key=value"))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override `{assignment}` has an empty key segment");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("override `{assignment}`: `{p}` is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
