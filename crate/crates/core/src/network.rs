//! Feed-forward ReLU networks, their lifted compact form, and JSON weights.
//!
//! A network with hidden layers (W⁰, b⁰), …, (W^{ℓ−1}, b^{ℓ−1}) and final
//! affine map (W^ℓ, b^ℓ) computes
//!
//! ```text
//!     x⁰ = x,   x^{k+1} = φ(W^k x^k + b^k),   f(x) = W^ℓ x^ℓ + b^ℓ
//! ```
//!
//! with φ = ReLU applied elementwise. The compact form stacks the whole
//! trajectory 𝐱 = [x⁰; …; x^ℓ] and rewrites the recursion as the single
//! constraint 𝐁𝐱 = φ(𝐀𝐱 + 𝐛), which is what every LMI in the verifier is
//! posed over.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unsupported activation {0:?}; only \"relu\" is supported")]
    UnsupportedActivation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("network must have at least one hidden layer")]
    NoHiddenLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

pub fn relu(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| v.max(0.0))
}

/// One affine layer `x ↦ Wx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self, NetworkError> {
        if weight.nrows() != bias.len() {
            return Err(NetworkError::DimensionMismatch(format!(
                "weight has {} rows but bias has length {}",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Layer { weight, bias })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }
}

/// ReLU MLP with at least one hidden layer and a separate final affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    hidden: Vec<Layer>,
    output: Layer,
    activation: Activation,
    metadata: Option<serde_json::Value>,
}

impl Network {
    pub fn new(hidden: Vec<Layer>, output: Layer) -> Result<Self, NetworkError> {
        if hidden.is_empty() {
            return Err(NetworkError::NoHiddenLayer);
        }
        for (k, pair) in hidden.windows(2).enumerate() {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(NetworkError::DimensionMismatch(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    k,
                    pair[0].weight.nrows(),
                    k + 1,
                    pair[1].weight.ncols()
                )));
            }
        }
        let last_width = hidden.last().unwrap().weight.nrows();
        if output.weight.ncols() != last_width {
            return Err(NetworkError::DimensionMismatch(format!(
                "final layer expects {} inputs but last hidden layer outputs {}",
                output.weight.ncols(),
                last_width
            )));
        }
        Ok(Network {
            hidden,
            output,
            activation: Activation::Relu,
            metadata: None,
        })
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.weight.nrows()
    }

    /// Number of hidden layers ℓ.
    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.hidden
    }

    pub fn output_layer(&self) -> &Layer {
        &self.output
    }

    /// Widths n₀, …, n_ℓ of the trajectory blocks.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.hidden.iter().map(|l| l.weight.nrows()));
        w
    }

    /// Forward pass returning the output and the trajectory [x⁰, …, x^ℓ].
    pub fn forward(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, Vec<DVector<f64>>), NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch(format!(
                "input has length {} but network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut trajectory = Vec::with_capacity(self.hidden.len() + 1);
        trajectory.push(x.clone());
        let mut cur = x.clone();
        for layer in &self.hidden {
            cur = relu(&layer.apply(&cur));
            trajectory.push(cur.clone());
        }
        Ok((self.output.apply(&cur), trajectory))
    }

    /// Output only.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, NetworkError> {
        Ok(self.forward(x)?.0)
    }

    pub fn compact_form(&self) -> CompactForm {
        CompactForm::new(self)
    }

    /// Builds a network computing exactly `x ↦ Kx` with `width ≥ 2m` hidden
    /// units, via the ReLU split φ(Kx) − φ(−Kx). Rows of K beyond the first
    /// two copies are repeated with their output weights split evenly.
    /// Metadata records the construction and its measured error.
    pub fn linear_gain(k: &DMatrix<f64>, width: usize) -> Result<Self, NetworkError> {
        let m = k.nrows();
        if width < 2 * m {
            return Err(NetworkError::DimensionMismatch(format!(
                "width {} is too small to split a {}-row gain",
                width, m
            )));
        }
        let n = k.ncols();
        let mut w0 = DMatrix::zeros(width, n);
        let mut w1 = DMatrix::zeros(m, width);
        // Positive copies of row i at slots i, 2m, 2m+1, ... (round robin),
        // negative copy at slot m+i.
        let mut copies = vec![1usize; m];
        for extra in (2 * m)..width {
            copies[extra % m] += 1;
        }
        let mut slot = 2 * m;
        for i in 0..m {
            let share = 1.0 / copies[i] as f64;
            w0.view_mut((i, 0), (1, n)).copy_from(&k.row(i));
            w1[(i, i)] = share;
            for _ in 1..copies[i] {
                w0.view_mut((slot, 0), (1, n)).copy_from(&k.row(i));
                w1[(i, slot)] = share;
                slot += 1;
            }
            w0.view_mut((m + i, 0), (1, n)).copy_from(&(-k.row(i)));
            w1[(i, m + i)] = -1.0;
        }
        let net = Network::new(
            vec![Layer::new(w0, DVector::zeros(width))?],
            Layer::new(w1, DVector::zeros(m))?,
        )?;
        Ok(net.with_metadata(serde_json::json!({
            "method": "relu_split",
            "gain": matrix_rows(k),
            "max_abs_error": 0.0,
        })))
    }

    /// Exact identity network on `n` inputs (a `linear_gain` of I).
    pub fn identity(n: usize) -> Self {
        Self::linear_gain(&DMatrix::identity(n, n), 2 * n).expect("identity gain is well-formed")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let path = path.as_ref();
        let json = self.to_json_string();
        std::fs::write(path, json).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            activation: "relu".to_string(),
            layers: self.hidden.iter().map(layer_to_file).collect(),
            output: layer_to_file(&self.output),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        if file.activation != "relu" {
            return Err(NetworkError::UnsupportedActivation(file.activation));
        }
        let mut hidden = Vec::with_capacity(file.layers.len());
        for (k, lf) in file.layers.iter().enumerate() {
            hidden.push(layer_from_file(lf, &format!("layer {k}"))?);
        }
        let output = layer_from_file(&file.output, "output layer")?;
        let mut net = Network::new(hidden, output).map_err(|e| match e {
            NetworkError::DimensionMismatch(d) => NetworkError::Parse(d),
            other => other,
        })?;
        net.metadata = file.metadata;
        Ok(net)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn layer_to_file(layer: &Layer) -> LayerFile {
    LayerFile {
        weights: matrix_rows(&layer.weight),
        bias: layer.bias.iter().copied().collect(),
    }
}

fn layer_from_file(lf: &LayerFile, what: &str) -> Result<Layer, NetworkError> {
    let rows = lf.weights.len();
    if rows == 0 {
        return Err(NetworkError::Parse(format!("{what}: empty weight matrix")));
    }
    let cols = lf.weights[0].len();
    for (i, r) in lf.weights.iter().enumerate() {
        if r.len() != cols {
            return Err(NetworkError::Parse(format!(
                "{what}: weight row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
    }
    if lf.bias.len() != rows {
        return Err(NetworkError::Parse(format!(
            "{what}: bias has length {} but weight matrix has {rows} rows",
            lf.bias.len()
        )));
    }
    let flat: Vec<f64> = lf.weights.iter().flatten().copied().collect();
    Layer::new(
        DMatrix::from_row_slice(rows, cols, &flat),
        DVector::from_column_slice(&lf.bias),
    )
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    activation: String,
    layers: Vec<LayerFile>,
    output: LayerFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    metadata: Option<serde_json::Value>,
}

/// Lifted rewrite of the layer recursion: 𝐁𝐱 = φ(𝐀𝐱 + 𝐛) over the stacked
/// trajectory 𝐱 = [x⁰; …; x^ℓ], plus the entry selectors E^k.
#[derive(Debug, Clone)]
pub struct CompactForm {
    /// 𝐀 = [blockdiag(W⁰, …, W^{ℓ−1}) | 0], d × s.
    pub big_a: DMatrix<f64>,
    /// 𝐛 = [b⁰; …; b^{ℓ−1}], length d.
    pub big_b: DVector<f64>,
    /// 𝐁 = [0 | I], d × s, selecting x¹ … x^ℓ.
    pub selector: DMatrix<f64>,
    /// E⁰ … E^ℓ, each n_k × s.
    pub block_selectors: Vec<DMatrix<f64>>,
    /// Widths n₀ … n_ℓ.
    pub widths: Vec<usize>,
    /// Final affine map (W^ℓ, b^ℓ), so f(x) = W^ℓ E^ℓ 𝐱 + b^ℓ.
    pub out_weight: DMatrix<f64>,
    pub out_bias: DVector<f64>,
    /// s = Σ n_k (stacked trajectory length).
    pub stacked_dim: usize,
    /// d = Σ_{k≥1} n_k (total hidden width the activation QC acts on).
    pub hidden_dim: usize,
    /// n̄ = s + 1.
    pub lifted_dim: usize,
}

impl CompactForm {
    pub fn new(net: &Network) -> Self {
        let widths = net.widths();
        let s: usize = widths.iter().sum();
        let d: usize = widths[1..].iter().sum();
        let n0 = widths[0];

        let mut big_a = DMatrix::zeros(d, s);
        let mut big_b = DVector::zeros(d);
        let mut row = 0;
        let mut col = 0;
        for layer in net.hidden_layers() {
            let (r, c) = (layer.weight.nrows(), layer.weight.ncols());
            big_a.view_mut((row, col), (r, c)).copy_from(&layer.weight);
            big_b.rows_mut(row, r).copy_from(&layer.bias);
            row += r;
            col += c;
        }

        let mut selector = DMatrix::zeros(d, s);
        selector
            .view_mut((0, n0), (d, d))
            .copy_from(&DMatrix::identity(d, d));

        let mut block_selectors = Vec::with_capacity(widths.len());
        let mut offset = 0;
        for &w in &widths {
            let mut e = DMatrix::zeros(w, s);
            e.view_mut((0, offset), (w, w))
                .copy_from(&DMatrix::identity(w, w));
            block_selectors.push(e);
            offset += w;
        }

        CompactForm {
            big_a,
            big_b,
            selector,
            block_selectors,
            widths,
            out_weight: net.output_layer().weight.clone(),
            out_bias: net.output_layer().bias.clone(),
            stacked_dim: s,
            hidden_dim: d,
            lifted_dim: s + 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.out_weight.nrows()
    }

    pub fn selector_for(&self, k: usize) -> &DMatrix<f64> {
        &self.block_selectors[k]
    }

    /// Stacks a forward trajectory into 𝐱.
    pub fn stack_trajectory(&self, trajectory: &[DVector<f64>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.stacked_dim);
        let mut offset = 0;
        for t in trajectory {
            x.rows_mut(offset, t.len()).copy_from(t);
            offset += t.len();
        }
        x
    }

    /// Residual ‖𝐁𝐱 − φ(𝐀𝐱 + 𝐛)‖∞ of the compact-form identity on a
    /// stacked trajectory.
    pub fn replay_residual(&self, stacked: &DVector<f64>) -> f64 {
        let lhs = &self.selector * stacked;
        let rhs = relu(&(&self.big_a * stacked + &self.big_b));
        (lhs - rhs).amax()
    }
}
