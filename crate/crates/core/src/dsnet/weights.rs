//! Layer schema, parameter store and the binary weight file.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! "DSNW"  u32 version (=1)  u32 entry_count
//! entry:  u16 name_len  name (UTF-8)  u8 rank  rank x u32 dims  f32 data...
//! ```
//!
//! Each convolution contributes two entries: `<layer>` with rank 4
//! `(out, in, kh, kw)` and `<layer>.bias` with rank 1.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvParams;
use crate::error::{Error, Result};
use crate::image::Real;

pub const MAGIC: &[u8; 4] = b"DSNW";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsNetConfig {
    pub num_rdb: usize,
    pub base_channels: usize,
    pub rdb_layers: usize,
    pub rdb_growth: usize,
    pub lrelu_slope: f64,
}

impl Default for DsNetConfig {
    fn default() -> Self {
        DsNetConfig {
            num_rdb: 14,
            base_channels: 64,
            rdb_layers: 5,
            rdb_growth: 32,
            lrelu_slope: 0.2,
        }
    }
}

/// Shape of one convolution in the schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerSpec {
    fn new(name: impl Into<String>, out_channels: usize, in_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            out_channels,
            in_channels,
            kernel,
            stride,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
    }
}

pub fn cascade_name(rdb: usize) -> String {
    format!("cascade.{rdb}")
}

pub fn rdb_conv_name(rdb: usize, layer: usize) -> String {
    format!("rdb.{rdb}.conv.{layer}")
}

pub fn rdb_fusion_name(rdb: usize) -> String {
    format!("rdb.{rdb}.fusion")
}

impl DsNetConfig {
    /// Small network used for gradient checks and desk-scale training.
    pub fn tiny() -> Self {
        DsNetConfig {
            num_rdb: 2,
            base_channels: 8,
            rdb_layers: 3,
            rdb_growth: 8,
            lrelu_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_rdb == 0 || self.base_channels == 0 || self.rdb_layers == 0 || self.rdb_growth == 0 {
            return Err(Error::Config(format!("all DSNet counts must be at least 1: {self:?}")));
        }
        if !(self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0) {
            return Err(Error::Config(format!(
                "LReLU slope must lie in (0, 1), got {}",
                self.lrelu_slope
            )));
        }
        Ok(())
    }

    /// Every convolution of the network, in evaluation order.
    pub fn schema(&self) -> Vec<LayerSpec> {
        let b = self.base_channels;
        let g = self.rdb_growth;
        let mut layers = vec![
            LayerSpec::new("down", b, 3, 3, 2),
            LayerSpec::new("shallow", b, b, 3, 1),
        ];
        for i in 1..=self.num_rdb {
            if i > 1 {
                layers.push(LayerSpec::new(cascade_name(i), b, i * b, 1, 1));
            }
            for k in 1..=self.rdb_layers {
                layers.push(LayerSpec::new(rdb_conv_name(i, k), g, b + (k - 1) * g, 3, 1));
            }
            layers.push(LayerSpec::new(rdb_fusion_name(i), b, b + self.rdb_layers * g, 1, 1));
        }
        layers.push(LayerSpec::new("rl1", b, (self.num_rdb + 1) * b, 1, 1));
        layers.push(LayerSpec::new("rl2", b, b, 3, 1));
        layers.push(LayerSpec::new("final", 3, b, 3, 1));
        layers
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (n, b, l, g) = (self.num_rdb, self.base_channels, self.rdb_layers, self.rdb_growth);
        let down = 27 * b + b;
        let shallow = 9 * b * b + b;
        // sum_{i=2..n} (i*b*b + b)
        let cascades = (n * (n + 1) / 2 - 1) * b * b + (n - 1) * b;
        // sum_{k=1..l} ((b + (k-1) g) * 9g + g) + fusion
        let dense = 9 * g * (l * b + g * l * (l - 1) / 2) + l * g;
        let fusion = (b + l * g) * b + b;
        let rl1 = (n + 1) * b * b + b;
        let rl2 = 9 * b * b + b;
        let last = 27 * b + 3;
        down + shallow + cascades + n * (dense + fusion) + rl1 + rl2 + last
    }

    /// Recover the configuration a set of parameters was built for.
    fn infer(layers: &HashMap<String, ConvParams<f32>>) -> Result<Self> {
        let get = |name: &str| {
            layers
                .get(name)
                .ok_or_else(|| Error::weights(name, "missing layer"))
        };
        let base_channels = get("down")?.out_channels;
        let rdb_growth = get(&rdb_conv_name(1, 1))?.out_channels;
        let num_rdb = (1..).take_while(|&i| layers.contains_key(&rdb_fusion_name(i))).count();
        let rdb_layers = (1..).take_while(|&k| layers.contains_key(&rdb_conv_name(1, k))).count();
        Ok(DsNetConfig {
            num_rdb,
            base_channels,
            rdb_layers,
            rdb_growth,
            lrelu_slope: DsNetConfig::default().lrelu_slope,
        })
    }
}

/// Complete, schema-checked DSNet parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    config: DsNetConfig,
    layers: Vec<ConvParams<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ModelWeights<T> {
    /// Check `layers` against the schema of `config` and take ownership.
    pub fn from_layers(config: DsNetConfig, layers: Vec<ConvParams<T>>) -> Result<Self> {
        config.validate()?;
        let schema = config.schema();
        let mut by_name: HashMap<String, ConvParams<T>> = HashMap::new();
        for layer in layers {
            if by_name.contains_key(&layer.name) {
                return Err(Error::weights(&layer.name, "duplicate layer"));
            }
            by_name.insert(layer.name.clone(), layer);
        }
        let mut ordered = Vec::with_capacity(schema.len());
        for spec in &schema {
            let mut layer = by_name
                .remove(&spec.name)
                .ok_or_else(|| Error::weights(&spec.name, "missing layer"))?;
            let got = (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w);
            let want = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel);
            if got != want {
                return Err(Error::weights(
                    &spec.name,
                    format!("shape {got:?} does not match schema {want:?}"),
                ));
            }
            layer.stride = spec.stride;
            layer.validate()?;
            ordered.push(layer);
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::weights(extra, "layer is not part of the schema"));
        }
        let index = ordered
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.clone(), i))
            .collect();
        Ok(ModelWeights {
            config,
            layers: ordered,
            index,
        })
    }

    pub fn zeros(config: DsNetConfig) -> Result<Self> {
        let layers = config
            .schema()
            .into_iter()
            .map(|s| ConvParams::zeros(s.name, s.out_channels, s.in_channels, s.kernel, s.stride))
            .collect();
        Self::from_layers(config, layers)
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn random(config: DsNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .schema()
            .into_iter()
            .map(|s| {
                let mut p = ConvParams::zeros(s.name, s.out_channels, s.in_channels, s.kernel, s.stride);
                let area = (s.kernel * s.kernel) as f64;
                let limit = (6.0 / (area * (s.in_channels + s.out_channels) as f64)).sqrt();
                for w in &mut p.weights {
                    *w = T::of(rng.gen_range(-limit..limit));
                }
                p
            })
            .collect();
        Self::from_layers(config, layers)
    }

    pub fn config(&self) -> &DsNetConfig {
        &self.config
    }

    /// Change the activation slope, which the weight file does not record.
    pub fn set_lrelu_slope(&mut self, slope: f64) -> Result<()> {
        let mut cfg = self.config;
        cfg.lrelu_slope = slope;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn layers(&self) -> &[ConvParams<T>] {
        &self.layers
    }

    /// Mutable access to every parameter. Shapes stay fixed.
    pub fn layers_mut(&mut self) -> impl Iterator<Item = (&mut [T], &mut [T])> {
        self.layers
            .iter_mut()
            .map(|l| (l.weights.as_mut_slice(), l.bias.as_mut_slice()))
    }

    pub fn layer(&self, name: &str) -> Result<&ConvParams<T>> {
        self.index
            .get(name)
            .map(|&i| &self.layers[i])
            .ok_or_else(|| Error::weights(name, "missing layer"))
    }

    /// Mutable weights and bias of one layer.
    pub fn layer_mut(&mut self, name: &str) -> Result<(&mut [T], &mut [T])> {
        let i = self
            .index
            .get(name)
            .copied()
            .ok_or_else(|| Error::weights(name, "missing layer"))?;
        let l = &mut self.layers[i];
        Ok((l.weights.as_mut_slice(), l.bias.as_mut_slice()))
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvParams::param_count).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config,
            layers: self.layers.iter().map(ConvParams::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Same shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (w, b) in out.layers_mut() {
            w.fill(T::zero());
            b.fill(T::zero());
        }
        out
    }

    /// Every parameter flattened in schema order (weights, then bias, per layer).
    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn flat_get(&self, mut index: usize) -> T {
        for l in &self.layers {
            if index < l.weights.len() {
                return l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn flat_set(&mut self, mut index: usize, value: T) {
        for l in &mut self.layers {
            if index < l.weights.len() {
                l.weights[index] = value;
                return;
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                l.bias[index] = value;
                return;
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Name of the layer owning flat parameter `index`, with `.bias` for biases.
    pub fn flat_name(&self, mut index: usize) -> String {
        for l in &self.layers {
            if index < l.weights.len() {
                return l.name.clone();
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return format!("{}.bias", l.name);
            }
            index -= l.bias.len();
        }
        String::from("<out of range>")
    }
}

impl ModelWeights<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.param_count() + 64 * self.layers.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(2 * self.layers.len() as u32).to_le_bytes());
        let mut entry = |name: &str, dims: &[usize], data: &[f32]| {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for l in &self.layers {
            entry(
                &l.name,
                &[l.out_channels, l.in_channels, l.kernel_h, l.kernel_w],
                &l.weights,
            );
            entry(&format!("{}.bias", l.name), &[l.out_channels], &l.bias);
        }
        out
    }

    /// Parse a weight file, inferring the network configuration from the
    /// layer shapes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let layers = parse_entries(bytes)?;
        let config = DsNetConfig::infer(&layers)?;
        Self::from_layers(config, layers.into_values().collect())
    }

    /// Parse a weight file and require it to match `config`.
    pub fn from_bytes_with(bytes: &[u8], config: DsNetConfig) -> Result<Self> {
        let layers = parse_entries(bytes)?;
        Self::from_layers(config, layers.into_values().collect())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::weights(
                context,
                format!("file truncated at byte {} (needed {n} more)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, context: &str) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    fn u16(&mut self, context: &str) -> Result<u16> {
        let b = self.take(2, context)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Read raw entries and pair every rank-4 weight with its `.bias`.
fn parse_entries(bytes: &[u8]) -> Result<HashMap<String, ConvParams<f32>>> {
    const HEADER: &str = "<header>";
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, HEADER)? != MAGIC {
        return Err(Error::weights(HEADER, "bad magic, expected \"DSNW\""));
    }
    let version = cur.u32(HEADER)?;
    if version != VERSION {
        return Err(Error::weights(HEADER, format!("unsupported version {version}")));
    }
    let count = cur.u32(HEADER)? as usize;

    let mut weights: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    let mut biases: HashMap<String, Vec<f32>> = HashMap::new();
    let mut previous = String::from(HEADER);
    for _ in 0..count {
        let len = cur.u16(&previous)? as usize;
        let name = std::str::from_utf8(cur.take(len, &previous)?)
            .map_err(|_| Error::weights(&previous, "entry name after this one is not UTF-8"))?
            .to_owned();
        let rank = cur.u8(&name)? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32(&name).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::weights(&name, "dimension product overflows"))?;
        let raw = cur.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::weights(&name, "dimension product overflows"))?,
            &name,
        )?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(layer) = name.strip_suffix(".bias") {
            if rank != 1 {
                return Err(Error::weights(&name, format!("bias must have rank 1, got {rank}")));
            }
            if biases.insert(layer.to_owned(), data).is_some() {
                return Err(Error::weights(&name, "duplicate entry"));
            }
        } else {
            if rank != 4 {
                return Err(Error::weights(&name, format!("weights must have rank 4, got {rank}")));
            }
            if weights.insert(name.clone(), (dims, data)).is_some() {
                return Err(Error::weights(&name, "duplicate entry"));
            }
        }
        previous = name;
    }
    if cur.pos != bytes.len() {
        return Err(Error::weights(
            &previous,
            format!("{} trailing bytes after the last entry", bytes.len() - cur.pos),
        ));
    }

    let mut layers = HashMap::new();
    for (name, (dims, data)) in weights {
        let bias = biases
            .remove(&name)
            .ok_or_else(|| Error::weights(&name, "missing bias entry"))?;
        if bias.len() != dims[0] {
            return Err(Error::weights(
                format!("{name}.bias"),
                format!("{} values for {} output channels", bias.len(), dims[0]),
            ));
        }
        let params = ConvParams {
            name: name.clone(),
            out_channels: dims[0],
            in_channels: dims[1],
            kernel_h: dims[2],
            kernel_w: dims[3],
            stride: 1,
            weights: data,
            bias,
        };
        params.validate()?;
        layers.insert(name, params);
    }
    if let Some(orphan) = biases.keys().min() {
        return Err(Error::weights(format!("{orphan}.bias"), "bias without weights"));
    }
    Ok(layers)
}

pub fn save_weights(weights: &ModelWeights<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, weights.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_enumerated_minimal_count() {
        let cfg = DsNetConfig {
            num_rdb: 1,
            base_channels: 1,
            rdb_layers: 1,
            rdb_growth: 1,
            lrelu_slope: 0.2,
        };
        // down 3*9+1, shallow 9+1, rdb conv 9+1, fusion 2+1, rl1 2+1, rl2 9+1, final 3*9+3
        assert_eq!(cfg.param_count(), 28 + 10 + 10 + 3 + 3 + 10 + 30);
        assert_eq!(cfg.param_count(), 94);
    }

    #[test]
    fn default_count_matches_built_weights() {
        let cfg = DsNetConfig::default();
        let w = ModelWeights::<f32>::zeros(cfg).unwrap();
        assert_eq!(w.param_count(), cfg.param_count());
        assert_eq!(w.flat().len(), cfg.param_count());
    }

    #[test]
    fn round_trip_and_inference_of_config() {
        let cfg = DsNetConfig::tiny();
        let w = ModelWeights::<f32>::random(cfg, 4).unwrap();
        let bytes = w.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        let back = ModelWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_files_name_the_layer() {
        let cfg = DsNetConfig::tiny();
        let bytes = ModelWeights::<f32>::random(cfg, 4).unwrap().to_bytes();

        let err = ModelWeights::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(&err, Error::Weights { layer, .. } if layer == "final.bias"), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelWeights::from_bytes(&bad), Err(Error::Weights { .. })));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(ModelWeights::from_bytes(&bad).unwrap_err().to_string().contains("version"));

        // shape mismatch: ask for the default config
        let err = ModelWeights::from_bytes_with(&bytes, DsNetConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Weights { layer, .. } if layer == "down"), "{err}");

        assert!(ModelWeights::from_bytes(&[]).is_err());
    }

    #[test]
    fn schema_rejects_extras_and_gaps() {
        let cfg = DsNetConfig::tiny();
        let w = ModelWeights::<f32>::zeros(cfg).unwrap();
        let mut layers = w.layers().to_vec();
        layers.push(ConvParams::zeros("extra", 1, 1, 1, 1));
        let err = ModelWeights::from_layers(cfg, layers).unwrap_err();
        assert!(matches!(&err, Error::Weights { layer, .. } if layer == "extra"));
        let mut layers = w.layers().to_vec();
        layers.retain(|l| l.name != "rl2");
        let err = ModelWeights::from_layers(cfg, layers).unwrap_err();
        assert!(matches!(&err, Error::Weights { layer, .. } if layer == "rl2"));
    }

    #[test]
    fn config_validation() {
        assert!(DsNetConfig { num_rdb: 0, ..DsNetConfig::tiny() }.validate().is_err());
        assert!(DsNetConfig { lrelu_slope: 1.0, ..DsNetConfig::tiny() }.validate().is_err());
        assert!(DsNetConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn closed_form_count_matches_schema(n in 1usize..6, b in 1usize..10, l in 1usize..6, g in 1usize..10) {
            let cfg = DsNetConfig { num_rdb: n, base_channels: b, rdb_layers: l, rdb_growth: g, lrelu_slope: 0.2 };
            let from_schema: usize = cfg.schema().iter().map(LayerSpec::param_count).sum();
            prop_assert_eq!(cfg.param_count(), from_schema);
            let wider = DsNetConfig { base_channels: 2 * b, ..cfg };
            prop_assert!(wider.param_count() > cfg.param_count());
        }
    }
}
