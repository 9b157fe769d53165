//! Versioned text serialization of trained models.
//!
//! Line-oriented: a header (dims, scales, steps, seed, head mode) followed
//! by the weight sections in the declared parameter order. Floats use the
//! shortest round-tripping decimal form, so save/load is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::cell::{GateWeights, LstmWeights, GATE_NAMES};
use super::{AffineHead, HeadMode, SecondOrderModel};

const MAGIC: &str = "paramcast model v1";

impl SecondOrderModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "feature_dim {}", self.feature_dim)?;
        writeln!(out, "hidden {}", self.hidden)?;
        writeln!(out, "steps {}", self.steps)?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "head_mode {}", self.head_mode.name())?;
        write!(out, "scales")?;
        for s in &self.scales {
            write!(out, " {s}")?;
        }
        writeln!(out)?;
        write!(out, "alpha")?;
        for s in &self.scales {
            write!(out, " {}", self.alpha[s])?;
        }
        writeln!(out)?;
        writeln!(out, "head_weight")?;
        write_matrix(&mut out, &self.head.weight)?;
        writeln!(out, "head_bias")?;
        write_row(&mut out, self.head.bias.iter())?;
        for &s in &self.scales {
            writeln!(out, "scale {s}")?;
            let cell = &self.cells[&s];
            for (gate, name) in cell.gates().iter().zip(GATE_NAMES) {
                writeln!(out, "gate {name}")?;
                writeln!(out, "w")?;
                write_matrix(&mut out, &gate.w)?;
                writeln!(out, "u")?;
                write_matrix(&mut out, &gate.u)?;
                writeln!(out, "b")?;
                write_row(&mut out, gate.b.iter())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SecondOrderModel> {
        let reader = BufReader::new(File::open(path)?);
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        let mut cursor = Cursor { lines, pos: 0 };

        if cursor.next_line()? != MAGIC {
            return Err(Error::ModelFormat(format!("missing magic line '{MAGIC}'")));
        }
        let feature_dim: usize = cursor.keyed_value("feature_dim")?;
        let hidden: usize = cursor.keyed_value("hidden")?;
        let steps: usize = cursor.keyed_value("steps")?;
        let seed: u64 = cursor.keyed_value("seed")?;
        let head_mode = HeadMode::parse(&cursor.keyed_str("head_mode")?)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        let scales: Vec<usize> = cursor.keyed_list("scales")?;
        let alpha_values: Vec<f64> = cursor.keyed_list("alpha")?;
        if alpha_values.len() != scales.len() {
            return Err(Error::ModelFormat("alpha count != scale count".into()));
        }
        let out_dim = feature_dim + 1;
        cursor.expect("head_weight")?;
        let head_weight = cursor.matrix(out_dim, hidden)?;
        cursor.expect("head_bias")?;
        let head_bias = cursor.row(out_dim)?;

        let input_dim = feature_dim + 1;
        let mut cells = std::collections::BTreeMap::new();
        for &s in &scales {
            cursor.expect(&format!("scale {s}"))?;
            let mut gates = Vec::with_capacity(4);
            for name in GATE_NAMES {
                cursor.expect(&format!("gate {name}"))?;
                cursor.expect("w")?;
                let w = cursor.matrix(hidden, input_dim)?;
                cursor.expect("u")?;
                let u = cursor.matrix(hidden, hidden)?;
                cursor.expect("b")?;
                let b = cursor.row(hidden)?;
                gates.push(GateWeights { w, u, b });
            }
            let mut it = gates.into_iter();
            cells.insert(
                s,
                LstmWeights {
                    input: it.next().unwrap(),
                    forget: it.next().unwrap(),
                    output: it.next().unwrap(),
                    cell: it.next().unwrap(),
                },
            );
        }
        if cursor.pos != cursor.lines.len() {
            return Err(Error::ModelFormat(format!(
                "trailing content at line {}",
                cursor.pos + 1
            )));
        }

        Ok(SecondOrderModel {
            feature_dim,
            hidden,
            steps,
            scales: scales.clone(),
            head_mode,
            seed,
            cells,
            alpha: scales.iter().copied().zip(alpha_values).collect(),
            head: AffineHead {
                weight: head_weight,
                bias: head_bias,
            },
        })
    }
}

fn write_matrix<W: Write>(out: &mut W, m: &Array2<f64>) -> Result<()> {
    for row in m.rows() {
        write_row(out, row.iter())?;
    }
    Ok(())
}

fn write_row<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            write!(out, " ")?;
        }
        write!(out, "{v}")?;
        first = false;
    }
    writeln!(out)?;
    Ok(())
}

struct Cursor {
    lines: Vec<String>,
    pos: usize,
}

impl Cursor {
    fn next_line(&mut self) -> Result<&str> {
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(line)
    }

    fn expect(&mut self, expected: &str) -> Result<()> {
        let pos = self.pos + 1;
        let line = self.next_line()?;
        if line != expected {
            return Err(Error::ModelFormat(format!(
                "line {pos}: expected '{expected}', got '{line}'"
            )));
        }
        Ok(())
    }

    fn keyed_str(&mut self, key: &str) -> Result<String> {
        let pos = self.pos + 1;
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::ModelFormat(format!("line {pos}: expected '{key} <value>'")))
    }

    fn keyed_value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.keyed_str(key)?;
        raw.parse()
            .map_err(|_| Error::ModelFormat(format!("bad value for {key}: '{raw}'")))
    }

    fn keyed_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        let raw = self.keyed_str(key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse()
                    .map_err(|_| Error::ModelFormat(format!("bad value for {key}: '{tok}'")))
            })
            .collect()
    }

    fn row(&mut self, len: usize) -> Result<Array1<f64>> {
        let pos = self.pos + 1;
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("line {pos}: bad float '{tok}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != len {
            return Err(Error::ModelFormat(format!(
                "line {pos}: expected {len} values, got {}",
                values.len()
            )));
        }
        Ok(Array1::from(values))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((rows, cols));
        for r in 0..rows {
            let row = self.row(cols)?;
            m.row_mut(r).assign(&row);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut model =
            SecondOrderModel::init(4, 6, 5, &[1, 5, 10, 20], 0.5, HeadMode::Learned, 77).unwrap();
        // Scribble irrational-looking values over everything.
        let flat: Vec<f64> = model
            .flatten_params()
            .iter()
            .map(|_| rng.random_range(-2.0..2.0) * std::f64::consts::PI)
            .collect();
        model.assign_params(&flat).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        model.save(&path).unwrap();
        let loaded = SecondOrderModel::load(&path).unwrap();
        assert_eq!(model, loaded);

        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.txt");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn rejects_corrupted_files() {
        let dir = tempfile::tempdir().unwrap();
        let model = SecondOrderModel::init(2, 3, 2, &[1], 0.0, HeadMode::Learned, 1).unwrap();
        let path = dir.path().join("model.txt");
        model.save(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let bad = dir.path().join("bad.txt");

        std::fs::write(&bad, text.replace(MAGIC, "something else")).unwrap();
        assert!(matches!(
            SecondOrderModel::load(&bad),
            Err(Error::ModelFormat(_))
        ));

        let mut truncated: Vec<&str> = text.lines().collect();
        truncated.truncate(truncated.len() - 2);
        std::fs::write(&bad, truncated.join("\n")).unwrap();
        assert!(matches!(
            SecondOrderModel::load(&bad),
            Err(Error::ModelFormat(_))
        ));
    }
}
