//! Named parameter sets, Adam, and the checkpoint container.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor;

const CKPT_MAGIC: &[u8; 4] = b"HRCK";
const CKPT_VERSION: u32 = 1;

/// Model parameters keyed by unique path strings. BTreeMap keeps every
/// iteration order deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

/// Gradients accumulated outside the graph, aligned with a [`ParamSet`].
pub type GradMap = BTreeMap<String, Vec<f64>>;

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Insert a parameter; duplicate names are a wiring bug.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.map.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        self.map.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Zero-filled gradient map with one slot per parameter scalar.
    pub fn zero_grads(&self) -> GradMap {
        self.map
            .iter()
            .map(|(name, t)| (name.clone(), vec![0.0; t.numel()]))
            .collect()
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. Parameters missing from
/// `grads` are left untouched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradMap,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, grad) in grads {
        let tensor = params.get_mut(name);
        assert_eq!(
            grad.len(),
            tensor.numel(),
            "gradient length mismatch for {name:?}"
        );
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for i in 0..grad.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Write the versioned binary checkpoint: name, shape, and raw 64-bit
/// little-endian values per parameter.
pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| NeuralError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| NeuralError::io(path, e);

    w.write_all(CKPT_MAGIC).map_err(io)?;
    w.write_all(&CKPT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.len() as u64).to_le_bytes()).map_err(io)?;
    for (name, tensor) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(bytes).map_err(io)?;
        w.write_all(&(tensor.shape.len() as u32).to_le_bytes())
            .map_err(io)?;
        for &d in &tensor.shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let file = std::fs::File::open(path).map_err(|e| NeuralError::io(path, e))?;
    let mut r = BufReader::new(file);
    let corrupt = |reason: &str| NeuralError::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                corrupt("truncated file")
            } else {
                NeuralError::io(path, e)
            }
        })?;
        Ok(buf)
    };

    if bytes(4)? != CKPT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes(4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes(8)?.try_into().unwrap()) as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(bytes(4)?.try_into().unwrap()) as usize;
        let name =
            String::from_utf8(bytes(name_len)?).map_err(|_| corrupt("name is not utf-8"))?;
        if params.contains(&name) {
            return Err(corrupt(&format!("duplicate parameter {name:?}")));
        }
        let ndims = u32::from_le_bytes(bytes(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(u64::from_le_bytes(bytes(8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = bytes(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(&format!("non-finite value in {name:?}")));
        }
        params.insert(name, Tensor::new(shape, data));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a.w", Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]));
        p.insert("a.b", Tensor::matrix(1, 2, vec![0.0, 0.0]));
        p
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let mut params = small_set();
        let mut grads = params.zero_grads();
        grads.get_mut("a.w").unwrap().copy_from_slice(&[0.3, -0.7, 0.1, 2.0]);
        let before = params.get("a.w").data.clone();
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.0125, 0.9, 0.999, 1e-8);
        let after = &params.get("a.w").data;
        for i in 0..4 {
            let step = after[i] - before[i];
            let expected = -0.0125 * grads["a.w"][i].signum();
            // With bias correction the t=1 step is lr·g/(|g|+eps') ≈ lr·sign(g).
            assert!(
                (step - expected).abs() < 1e-6,
                "coordinate {i}: step {step} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_gradient_means_zero_update() {
        let mut params = small_set();
        let grads = params.zero_grads();
        let before = params.clone();
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.01, 0.9, 0.999, 1e-8);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = small_set();
            let mut state = AdamState::new();
            for step in 0..20 {
                let mut grads = params.zero_grads();
                for (i, g) in grads.get_mut("a.w").unwrap().iter_mut().enumerate() {
                    *g = ((step * 4 + i) as f64 * 0.37).sin();
                }
                adam_step(&mut params, &grads, &mut state, 0.01, 0.9, 0.999, 1e-8);
            }
            params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_parameter_names_panic() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(1.0));
        p.insert("x", Tensor::scalar(2.0));
    }

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = small_set();
        save_checkpoint(&path, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &small_set()).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        raw[0] = b'Z';
        std::fs::write(&path, &raw).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NeuralError::CorruptCheckpoint { .. })
        ));

        save_checkpoint(&path, &small_set()).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NeuralError::CorruptCheckpoint { .. })
        ));
    }
}
