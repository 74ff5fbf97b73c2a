//! Synthetic Verilog-like corpora with planted ground truth.
//!
//! Three rules are planted:
//! - congestion is a function of the line's own text (it carries the
//!   congestion token),
//! - timing is a function of the neighbouring lines only (a trigger token on
//!   line `i - 1` or `i + 1` flags line `i`),
//! - WNS is an affine function of the operator counts on arithmetic lines.
//!
//! Filler and arithmetic lines are drawn from a small vocabulary, so the same
//! text shows up many times with different labels depending on neighbours.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_labels, CorpusError, LabelRecord};

pub const CONGESTION_TOKEN: &str = "CONGTAG";
pub const TIMING_TRIGGER: &str = "TIMTAG";
pub const MUL_OP: &str = "*";
pub const ADD_OP: &str = "+";
/// Operator slots on every arithmetic line.
pub const ARITH_SLOTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedRules {
    pub congestion_rate: f64,
    pub trigger_rate: f64,
    pub arith_rate: f64,
    pub wns_base: f64,
    pub wns_per_mul: f64,
    pub wns_per_add: f64,
}

impl Default for PlantedRules {
    fn default() -> Self {
        Self {
            congestion_rate: 0.05,
            trigger_rate: 0.03,
            arith_rate: 0.3,
            wns_base: -0.1,
            wns_per_mul: -0.15,
            wns_per_add: -0.05,
        }
    }
}

impl PlantedRules {
    pub fn wns(&self, n_mul: usize, n_add: usize) -> f64 {
        self.wns_base + self.wns_per_mul * n_mul as f64 + self.wns_per_add * n_add as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_modules: usize,
    pub lines_per_module: usize,
    pub n_designs: usize,
    pub seed: u64,
    pub rules: PlantedRules,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_modules: 50,
            lines_per_module: 100,
            n_designs: 5,
            seed: 0,
            rules: PlantedRules::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Paths relative to the corpus root, e.g. `d0/d0.v`.
    pub files: Vec<(PathBuf, String)>,
    pub labels: Vec<LabelRecord>,
}

impl SyntheticCorpus {
    pub fn write(&self, corpus_dir: &Path, label_path: &Path) -> Result<(), CorpusError> {
        for (rel, text) in &self.files {
            let path = corpus_dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::write(&path, text).map_err(|source| CorpusError::Io { path, source })?;
        }
        if let Some(parent) = label_path.parent() {
            fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = fs::File::create(label_path).map_err(|source| CorpusError::Io {
            path: label_path.to_path_buf(),
            source,
        })?;
        write_labels(file, &self.labels).map_err(|source| CorpusError::Io {
            path: label_path.to_path_buf(),
            source,
        })
    }
}

enum Kind {
    Filler,
    Congestion,
    Trigger,
    Arith { n_mul: usize, n_add: usize },
}

const SIGNALS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn filler(rng: &mut ChaCha8Rng) -> String {
    let s = SIGNALS[rng.gen_range(0..SIGNALS.len())];
    let t = SIGNALS[rng.gen_range(0..SIGNALS.len())];
    match rng.gen_range(0..5) {
        0 => format!("  wire [7:0] {s}_w ;"),
        1 => format!("  reg {s}_q ;"),
        2 => format!("  assign {s}_o = {t}_i ;"),
        3 => format!("  always @ ( posedge clk ) {s}_q <= {t}_d ;"),
        _ => "".to_owned(),
    }
}

fn arith(rng: &mut ChaCha8Rng, n_mul: usize, n_add: usize) -> String {
    let mut ops = vec![MUL_OP; n_mul];
    ops.extend(std::iter::repeat(ADD_OP).take(n_add));
    ops.extend(std::iter::repeat("&").take(ARITH_SLOTS - n_mul - n_add));
    // shuffle operator order
    for i in (1..ops.len()).rev() {
        ops.swap(i, rng.gen_range(0..=i));
    }
    let dst = SIGNALS[rng.gen_range(0..SIGNALS.len())];
    format!(
        "  assign {dst}_s = x0 {} x1 {} x2 {} x3 ;",
        ops[0], ops[1], ops[2]
    )
}

pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> SyntheticCorpus {
    assert!(cfg.n_modules >= 1, "n_modules must be at least 1");
    let n_designs = cfg.n_designs.clamp(1, cfg.n_modules);
    // header and endmodule take two lines
    let body = cfg.lines_per_module.max(2) - 2;
    let rules = &cfg.rules;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut design_text: Vec<Vec<String>> = vec![Vec::new(); n_designs];
    let mut labels = Vec::new();
    for m in 0..cfg.n_modules {
        let d = m % n_designs;
        let design_id = format!("d{d}");
        let module_id = format!("m{m:03}");
        // per-module cap on the number of multipliers, so module-level WNS varies
        let mul_cap = rng.gen_range(0..=ARITH_SLOTS);

        let kinds: Vec<Kind> = (0..body)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < rules.congestion_rate {
                    Kind::Congestion
                } else if u < rules.congestion_rate + rules.trigger_rate {
                    Kind::Trigger
                } else if u < rules.congestion_rate + rules.trigger_rate + rules.arith_rate {
                    let n_mul = rng.gen_range(0..=mul_cap);
                    let n_add = rng.gen_range(0..=ARITH_SLOTS - n_mul);
                    Kind::Arith { n_mul, n_add }
                } else {
                    Kind::Filler
                }
            })
            .collect();

        let mut lines = vec![format!("module {module_id} ( clk , x0 , x1 , x2 , x3 ) ;")];
        for kind in &kinds {
            lines.push(match kind {
                Kind::Filler => filler(&mut rng),
                Kind::Congestion => {
                    let s = SIGNALS[rng.gen_range(0..SIGNALS.len())];
                    format!("  assign {s}_bus = {CONGESTION_TOKEN} ^ sel ;")
                }
                Kind::Trigger => {
                    let s = SIGNALS[rng.gen_range(0..SIGNALS.len())];
                    format!("  always @ ( posedge clk ) {TIMING_TRIGGER} <= {s}_d ;")
                }
                Kind::Arith { n_mul, n_add } => arith(&mut rng, *n_mul, *n_add),
            });
        }
        lines.push("endmodule".to_owned());

        // kinds[i] is module line i + 2; header and endmodule are plain lines
        let n_lines = kinds.len() + 2;
        let is_trigger = |line: usize| {
            line >= 2 && matches!(kinds.get(line - 2), Some(Kind::Trigger))
        };
        for line_no in 1..=n_lines {
            let kind = line_no.checked_sub(2).and_then(|i| kinds.get(i));
            let congestion = matches!(kind, Some(Kind::Congestion));
            let timing = is_trigger(line_no - 1) || is_trigger(line_no + 1);
            let wns_ns = match kind {
                Some(Kind::Arith { n_mul, n_add }) => Some(rules.wns(*n_mul, *n_add)),
                _ => None,
            };
            if congestion || timing || wns_ns.is_some() {
                labels.push(LabelRecord {
                    design_id: design_id.clone(),
                    module_id: module_id.clone(),
                    line_no,
                    congestion,
                    timing,
                    wns_ns,
                });
            }
        }
        design_text[d].push(lines.join("\n"));
    }

    let files = design_text
        .into_iter()
        .enumerate()
        .map(|(d, modules)| {
            let mut text = format!("// synthetic design d{d}\n");
            text.push_str(&modules.join("\n\n"));
            text.push('\n');
            (PathBuf::from(format!("d{d}/d{d}.v")), text)
        })
        .collect();
    SyntheticCorpus { files, labels }
}
