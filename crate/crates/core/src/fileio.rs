//! JSON file formats: certification instances, backbone networks, raw
//! images, and output-deviation specs.
//!
//! Instance documents look like:
//!
//! ```json
//! {
//!   "h": 3, "w": 3, "k": 2,
//!   "ground_truth": [2, 2, 1, 1],
//!   "zonotope": {
//!     "center": [[-5.0, 0.1], [-5.0, -5.0], ...],
//!     "generators": [[[-0.1, 1.0], [-0.1, -0.1], ...]]
//!   },
//!   "polytope": { "p": [[1,1,1,1], [-1,-1,-1,-1]], "b": [1, 1] },
//!   "epsilon": 1e-6,
//!   "limits": { "nodes": 200000, "time_s": 60.0 }
//! }
//! ```
//!
//! `zonotope.center` has one row per flattened pixel (`HW` rows of `K`
//! channel values); each generator repeats that shape. `epsilon`, `big_m`
//! and `limits` are optional with the documented defaults. Strict parsing
//! rejects unknown keys with a line/column diagnostic; lenient parsing
//! strips them and reports one warning per dropped key. Floats are written
//! with the shortest representation that round-trips, so serialized files
//! are byte-stable.

use crate::geometry::{HPolytope, Heatmap, Zonotope};
use crate::problem::{ProblemInstance, SolverLimits};
use crate::reach::{Image, Network};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_epsilon() -> f64 {
    1e-6
}

fn default_big_m() -> f64 {
    1e6
}

/// `limits` object.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LimitsFile {
    /// Branch-and-bound node budget.
    pub nodes: u64,
    /// Wall-clock budget in seconds.
    pub time_s: f64,
}

impl Default for LimitsFile {
    fn default() -> Self {
        let d = SolverLimits::default();
        Self {
            nodes: d.max_nodes,
            time_s: d.time_budget_s,
        }
    }
}

/// `zonotope` object: pixel-major center and generators.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ZonotopeFile {
    /// `HW` rows of `K` channel values.
    pub center: Vec<Vec<f64>>,
    /// Each generator shaped like `center`.
    pub generators: Vec<Vec<Vec<f64>>>,
}

/// `polytope` object: facet matrix and offsets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolytopeFile {
    /// `r × 2K` facet coefficients.
    pub p: Vec<Vec<f64>>,
    /// `r` facet offsets.
    pub b: Vec<f64>,
}

/// A complete instance document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    /// Grid height.
    pub h: usize,
    /// Grid width.
    pub w: usize,
    /// Keypoint / channel count.
    pub k: usize,
    /// `2K` alternating row/col ground-truth coordinates, 1-based.
    pub ground_truth: Vec<i64>,
    /// Reachable heatmap set.
    pub zonotope: ZonotopeFile,
    /// Joint deviation polytope.
    pub polytope: PolytopeFile,
    /// Strict-inequality slack (default `1e-6`).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Raw Big-M constant used when tightening is off (default `1e6`).
    #[serde(default = "default_big_m")]
    pub big_m: f64,
    /// Solver budgets.
    #[serde(default)]
    pub limits: LimitsFile,
}

impl InstanceFile {
    /// Validate and convert into a [`ProblemInstance`].
    pub fn into_instance(self) -> Result<ProblemInstance> {
        let hw = self.h * self.w;
        let grid_from = |rows: &[Vec<f64>], what: &str| -> Result<Heatmap> {
            if rows.len() != hw {
                return Err(Error::ShapeMismatch(format!(
                    "{what} has {} pixel rows, expected {hw}",
                    rows.len()
                )));
            }
            let mut data = Vec::with_capacity(hw * self.k);
            for (j, row) in rows.iter().enumerate() {
                if row.len() != self.k {
                    return Err(Error::ShapeMismatch(format!(
                        "{what} row {} has {} channels, expected {}",
                        j + 1,
                        row.len(),
                        self.k
                    )));
                }
                data.extend_from_slice(row);
            }
            Heatmap::new(self.h, self.w, self.k, data)
        };
        let center = grid_from(&self.zonotope.center, "zonotope center")?;
        let generators = self
            .zonotope
            .generators
            .iter()
            .enumerate()
            .map(|(g, rows)| grid_from(rows, &format!("generator {}", g + 1)))
            .collect::<Result<Vec<_>>>()?;
        let reach = Zonotope::new(center, generators)?;
        let polytope = HPolytope::new(self.polytope.p, self.polytope.b)?;
        let limits = SolverLimits {
            max_nodes: self.limits.nodes,
            time_budget_s: self.limits.time_s,
        };
        Ok(
            ProblemInstance::new(self.ground_truth, reach, polytope, self.epsilon, limits)?
                .with_big_m_fallback(self.big_m),
        )
    }

    /// Snapshot an in-memory instance.
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let grid_to = |grid: &Heatmap| -> Vec<Vec<f64>> {
            grid.data().chunks(inst.num_keypoints()).map(<[f64]>::to_vec).collect()
        };
        Self {
            h: inst.height(),
            w: inst.width(),
            k: inst.num_keypoints(),
            ground_truth: inst.ground_truth().to_vec(),
            zonotope: ZonotopeFile {
                center: grid_to(inst.reach_set().center()),
                generators: inst.reach_set().generators().iter().map(grid_to).collect(),
            },
            polytope: PolytopeFile {
                p: inst.deviation_polytope().rows().to_vec(),
                b: inst.deviation_polytope().offsets().to_vec(),
            },
            epsilon: inst.epsilon(),
            big_m: inst.big_m_fallback(),
            limits: LimitsFile {
                nodes: inst.limits().max_nodes,
                time_s: inst.limits().time_budget_s,
            },
        }
    }
}

/// Recursive key schema for the lenient parser.
enum Schema {
    Obj(Vec<(&'static str, Schema)>),
    List(Box<Schema>),
    Leaf,
}

fn instance_schema() -> Schema {
    use Schema::*;
    let leaf_list = || List(Box::new(Leaf));
    let leaf_list2 = || List(Box::new(List(Box::new(Leaf))));
    let leaf_list3 = || List(Box::new(List(Box::new(List(Box::new(Leaf))))));
    Obj(vec![
        ("h", Leaf),
        ("w", Leaf),
        ("k", Leaf),
        ("ground_truth", leaf_list()),
        (
            "zonotope",
            Obj(vec![("center", leaf_list2()), ("generators", leaf_list3())]),
        ),
        ("polytope", Obj(vec![("p", leaf_list2()), ("b", leaf_list())])),
        ("epsilon", Leaf),
        ("big_m", Leaf),
        (
            "limits",
            Obj(vec![("nodes", Leaf), ("time_s", Leaf)]),
        ),
    ])
}

fn strip_unknown(
    value: &mut serde_json::Value,
    schema: &Schema,
    path: &str,
    warnings: &mut Vec<String>,
) {
    match (value, schema) {
        (serde_json::Value::Object(map), Schema::Obj(known)) => {
            let keys: Vec<String> = map.keys().cloned().collect();
            for key in keys {
                match known.iter().find(|(name, _)| *name == key) {
                    Some((_, child)) => {
                        let sub = format!("{path}.{key}");
                        strip_unknown(map.get_mut(&key).unwrap(), child, &sub, warnings);
                    }
                    None => {
                        warnings.push(format!("ignoring unknown key {path}.{key}"));
                        map.remove(&key);
                    }
                }
            }
        }
        (serde_json::Value::Array(items), Schema::List(inner)) => {
            for (idx, item) in items.iter_mut().enumerate() {
                strip_unknown(item, inner, &format!("{path}[{idx}]"), warnings);
            }
        }
        _ => {}
    }
}

/// Parse an instance document. Strict mode rejects unknown keys (the error
/// carries the parser's line/column); lenient mode drops them and returns
/// one warning per dropped key.
pub fn parse_instance(src: &str, strict: bool) -> Result<(ProblemInstance, Vec<String>)> {
    if strict {
        let file: InstanceFile = serde_json::from_str(src)?;
        Ok((file.into_instance()?, Vec::new()))
    } else {
        let mut value: serde_json::Value = serde_json::from_str(src)?;
        let mut warnings = Vec::new();
        strip_unknown(&mut value, &instance_schema(), "$", &mut warnings);
        let file: InstanceFile = serde_json::from_value(value)?;
        Ok((file.into_instance()?, warnings))
    }
}

/// Read and parse an instance file.
pub fn load_instance(path: &Path, strict: bool) -> Result<(ProblemInstance, Vec<String>)> {
    parse_instance(&std::fs::read_to_string(path)?, strict)
}

/// Serialize an instance as pretty JSON (byte-stable).
pub fn instance_to_json(inst: &ProblemInstance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(inst))
        .expect("instance files serialize")
}

/// Write an instance file.
pub fn save_instance(path: &Path, inst: &ProblemInstance) -> Result<()> {
    std::fs::write(path, instance_to_json(inst) + "\n")?;
    Ok(())
}

/// A backbone document: `{"layers": [{"type": "dense", ...}, ...]}`.
pub fn load_network(path: &Path) -> Result<Network> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// A raw image document: `{"h": .., "w": .., "c": .., "data": [..]}`.
pub fn load_image(path: &Path) -> Result<Image> {
    let img: Image = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    img.validate()?;
    Ok(img)
}

/// Output-deviation spec consumed by instance assembly: ground truth,
/// polytope and solver constants, without a reachable set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DeviationSpecFile {
    /// `2K` alternating row/col ground-truth coordinates, 1-based.
    pub ground_truth: Vec<i64>,
    /// Joint deviation polytope.
    pub polytope: PolytopeFile,
    /// Strict-inequality slack (default `1e-6`).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Raw Big-M constant (default `1e6`).
    #[serde(default = "default_big_m")]
    pub big_m: f64,
    /// Solver budgets.
    #[serde(default)]
    pub limits: LimitsFile,
}

impl DeviationSpecFile {
    /// Polytope accessor with validation.
    pub fn polytope(&self) -> Result<HPolytope> {
        HPolytope::new(self.polytope.p.clone(), self.polytope.b.clone())
    }

    /// Solver limits accessor.
    pub fn limits(&self) -> SolverLimits {
        SolverLimits {
            max_nodes: self.limits.nodes,
            time_budget_s: self.limits.time_s,
        }
    }
}

/// Read a deviation-spec file.
pub fn load_deviation_spec(path: &Path) -> Result<DeviationSpecFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
