//! Plain-text parameter files.
//!
//! ```text
//! featacq-params v1
//! cell gru
//! features 16
//! classes 10
//! repr_dim 20
//! steps 3
//! shared_policy false
//! epsilon 0.000001
//! block reset.w_in 20 32
//! <20 lines of 32 values>
//! block reset.w_state 20 20
//! ...
//! end
//! ```
//!
//! Blocks appear in [`Layout`](super::Layout) order, one matrix row per line.
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{CellType, ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};

pub const PARAMS_HEADER: &str = "featacq-params v1";

impl ModelParams {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        writeln!(out, "{PARAMS_HEADER}").unwrap();
        writeln!(out, "cell {}", s.cell.as_str()).unwrap();
        writeln!(out, "features {}", s.n_features).unwrap();
        writeln!(out, "classes {}", s.n_classes).unwrap();
        writeln!(out, "repr_dim {}", s.repr_dim).unwrap();
        writeln!(out, "steps {}", s.steps).unwrap();
        writeln!(out, "shared_policy {}", s.shared_policy).unwrap();
        writeln!(out, "epsilon {}", s.epsilon).unwrap();
        for block in self.layout.blocks() {
            writeln!(out, "block {} {} {}", block.name, block.rows, block.cols).unwrap();
            for row in self.values[block.range()].chunks(block.cols) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |m: String| Error::format(path, m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(PARAMS_HEADER) {
            return Err(err(format!("expected header `{PARAMS_HEADER}`")));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| err(format!("missing `{key}`")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(err(format!("expected `{key}`, found `{line}`"))),
            }
        };
        let num = |v: String, key: &str| v.parse::<usize>().map_err(|_| err(format!("bad `{key}` value `{v}`")));
        let cell: CellType = field("cell")?.parse()?;
        let n_features = num(field("features")?, "features")?;
        let n_classes = num(field("classes")?, "classes")?;
        let repr_dim = num(field("repr_dim")?, "repr_dim")?;
        let steps = num(field("steps")?, "steps")?;
        let shared_policy = match field("shared_policy")?.as_str() {
            "true" => true,
            "false" => false,
            v => return Err(err(format!("bad shared_policy `{v}`"))),
        };
        let epsilon = field("epsilon")?
            .parse::<f64>()
            .map_err(|_| err("bad epsilon".into()))?;
        let spec = ModelSpec {
            cell,
            n_features,
            n_classes,
            repr_dim,
            steps,
            shared_policy,
            epsilon,
        };
        let mut params = ModelParams::zeros(spec)?;
        let blocks = params.layout.blocks().to_vec();
        for block in &blocks {
            let expect = format!("block {} {} {}", block.name, block.rows, block.cols);
            match lines.next() {
                Some(l) if l == expect => {}
                other => return Err(err(format!("expected `{expect}`, found {other:?}"))),
            }
            let dest = &mut params.values[block.range()];
            for r in 0..block.rows {
                let line = lines.next().ok_or_else(|| err(format!("{} truncated", block.name)))?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| err(format!("{} row {r}: bad number", block.name)))?;
                if row.len() != block.cols || row.iter().any(|v| !v.is_finite()) {
                    return Err(err(format!(
                        "{} row {r}: expected {} finite values",
                        block.name, block.cols
                    )));
                }
                dest[r * block.cols..(r + 1) * block.cols].copy_from_slice(&row);
            }
        }
        if lines.next() != Some("end") {
            return Err(err("missing `end` marker".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, path)
    }
}
