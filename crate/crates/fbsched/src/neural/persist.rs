//! Model persistence: a versioned TOML file holding the network weights
//! and the normalization fitted with them.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so a
//! load returns bit-identical weights.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::Normalizer;
use super::mlp::{MlpParams, PeriodNet};
use super::NeuralError;

const SCHEMA: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema: u32,
    n_in: usize,
    m_hidden: usize,
    n_out: usize,
    normalization: NormFile,
    weights: WeightsFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormFile {
    input_min: Vec<f64>,
    input_span: Vec<f64>,
    output_min: Vec<f64>,
    output_span: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    /// Row-major m_hidden x n_in.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// Row-major n_out x m_hidden.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Write `net` to `path`, going through a sibling temporary file and a
/// rename so that a crash never leaves a half-written model behind.
pub fn save_model(net: &PeriodNet, path: &Path) -> Result<(), NeuralError> {
    let p = &net.params;
    let file = ModelFile {
        schema: SCHEMA,
        n_in: p.n_in(),
        m_hidden: p.m_hidden(),
        n_out: p.n_out(),
        normalization: NormFile {
            input_min: net.norm.in_lo.iter().copied().collect(),
            input_span: net.norm.in_span.iter().copied().collect(),
            output_min: net.norm.out_lo.iter().copied().collect(),
            output_span: net.norm.out_span.iter().copied().collect(),
        },
        weights: WeightsFile {
            w1: row_major(&p.w1),
            b1: p.b1.iter().copied().collect(),
            w2: row_major(&p.w2),
            b2: p.b2.iter().copied().collect(),
        },
    };
    let text = toml::to_string(&file).map_err(|e| NeuralError::Malformed(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PeriodNet, NeuralError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile =
        toml::from_str(&text).map_err(|e| NeuralError::Malformed(e.to_string()))?;
    if file.schema != SCHEMA {
        return Err(NeuralError::Malformed(format!(
            "unsupported schema {} (expected {SCHEMA})",
            file.schema
        )));
    }
    let expect = |what: &'static str, got: usize, expected: usize| {
        if got == expected {
            Ok(())
        } else {
            Err(NeuralError::DimensionMismatch {
                what,
                expected,
                got,
            })
        }
    };
    expect("w1 entries", file.weights.w1.len(), file.m_hidden * file.n_in)?;
    expect("b1 entries", file.weights.b1.len(), file.m_hidden)?;
    expect("w2 entries", file.weights.w2.len(), file.n_out * file.m_hidden)?;
    expect("b2 entries", file.weights.b2.len(), file.n_out)?;
    expect("input_min entries", file.normalization.input_min.len(), file.n_in)?;
    expect("input_span entries", file.normalization.input_span.len(), file.n_in)?;
    expect("output_min entries", file.normalization.output_min.len(), file.n_out)?;
    expect(
        "output_span entries",
        file.normalization.output_span.len(),
        file.n_out,
    )?;

    Ok(PeriodNet {
        params: MlpParams {
            w1: DMatrix::from_row_slice(file.m_hidden, file.n_in, &file.weights.w1),
            b1: DVector::from_vec(file.weights.b1),
            w2: DMatrix::from_row_slice(file.n_out, file.m_hidden, &file.weights.w2),
            b2: DVector::from_vec(file.weights.b2),
        },
        norm: Normalizer {
            in_lo: DVector::from_vec(file.normalization.input_min),
            in_span: DVector::from_vec(file.normalization.input_span),
            out_lo: DVector::from_vec(file.normalization.output_min),
            out_span: DVector::from_vec(file.normalization.output_span),
        },
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}
