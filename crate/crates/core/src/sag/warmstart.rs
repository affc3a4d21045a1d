use super::dense::{MemoryMode, SagOptions, SagState};
use super::jit::JitState;
use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::samplers::{Rng, RngState};

const MAGIC: &[u8; 4] = b"SAGW";
const VERSION: u32 = 1;

/// Serializes optimizer memory and, optionally, the sampling stream.
///
/// Layout (little-endian): magic, version `u32`, `n` `u64`, `p` `u64`,
/// mode flags `u32`, `k` `u64`, `m` `u64`, then `x`, `y`, `d` as `f64`
/// arrays, the visited bitmap, a presence byte and the rng state.
pub fn export_state(state: &SagState, rng: Option<&Rng>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * (state.x.len() * 2 + state.y.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(state.n() as u64).to_le_bytes());
    out.extend_from_slice(&(state.p() as u64).to_le_bytes());
    out.extend_from_slice(&state.options.flags().to_le_bytes());
    out.extend_from_slice(&state.k.to_le_bytes());
    out.extend_from_slice(&(state.m as u64).to_le_bytes());
    for v in state.x.iter().chain(&state.y).chain(&state.d) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bitmap = vec![0u8; state.n().div_ceil(8)];
    for (i, _) in state.visited.iter().enumerate().filter(|(_, &v)| v) {
        bitmap[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bitmap);
    match rng {
        Some(r) => {
            out.push(1);
            out.extend_from_slice(&r.state().to_bytes());
        }
        None => out.push(0),
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Blob("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(len.checked_mul(8).ok_or_else(|| Error::Blob("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Restores a state exported by [`export_state`] for use on `ds`.
///
/// With `center`, every stored memory has `d/m` subtracted so the memories
/// sum to zero; that needs vector memory.
pub fn import_state(bytes: &[u8], ds: &SparseDataset, center: bool) -> Result<(SagState, Option<Rng>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Blob("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Blob(format!("unsupported version {version}")));
    }
    let n = c.u64()? as usize;
    let p = c.u64()? as usize;
    if n != ds.n() {
        return Err(Error::Dimension { expected: ds.n(), got: n });
    }
    if p != ds.p() {
        return Err(Error::Dimension { expected: ds.p(), got: p });
    }
    let options = SagOptions::from_flags(c.u32()?)?;
    let k = c.u64()?;
    let m = c.u64()? as usize;
    let slots = match options.memory {
        MemoryMode::Scalar => n,
        MemoryMode::Vector => n * p,
    };
    let x = c.f64s(p)?;
    let y = c.f64s(slots)?;
    let d = c.f64s(p)?;
    let bitmap = c.take(n.div_ceil(8))?;
    let visited: Vec<bool> = (0..n).map(|i| bitmap[i / 8] >> (i % 8) & 1 == 1).collect();
    let rng = match c.take(1)?[0] {
        0 => None,
        1 => Some(Rng::from_state(&RngState::from_bytes(c.take(RngState::ENCODED_LEN)?)?)),
        b => return Err(Error::Blob(format!("bad rng marker {b}"))),
    };
    if c.pos != bytes.len() {
        return Err(Error::Blob("trailing bytes".into()));
    }
    let mut state = SagState::from_parts(n, p, x, y, d, visited, k, options)?;
    if state.m != m {
        return Err(Error::Blob(format!("seen count {m} disagrees with bitmap ({})", state.m)));
    }
    if center {
        state.center(ds)?;
    }
    Ok((state, rng))
}

impl JitState {
    /// Dense snapshot with scalar memory and exact regularization.
    pub fn to_sag_state(&self) -> SagState {
        let options = SagOptions { reweight: self.reweight, exact_reg: true, memory: MemoryMode::Scalar };
        SagState::from_parts(
            self.n(),
            self.p(),
            self.finalize(),
            self.y.clone(),
            self.d.clone(),
            self.visited.clone(),
            self.k,
            options,
        )
        .expect("engine components are consistent")
    }

    pub fn from_sag_state(state: SagState) -> Result<Self> {
        if state.options.memory != MemoryMode::Scalar || !state.options.exact_reg {
            return Err(Error::Unsupported("the sparse engine needs scalar memory with exact regularization".into()));
        }
        let reweight = state.options.reweight;
        JitState::from_dense(state.x, state.y, state.d, state.visited, state.k, reweight)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossModel;

    fn ds() -> SparseDataset {
        SparseDataset::from_dense(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.0]], vec![1.0, -1.0, 1.0]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ds = ds();
        let m = LossModel::logistic(0.05);
        for opts in [SagOptions::default(), SagOptions::basic()] {
            let mut st = SagState::new(3, vec![0.1, -0.2], opts);
            for i in [0, 2, 2] {
                st.step(&m, &ds, i, 0.5).unwrap();
            }
            let mut rng = Rng::new(9);
            rng.next_u64();
            let blob = export_state(&st, Some(&rng));
            let (back, r2) = import_state(&blob, &ds, false).unwrap();
            assert_eq!(back, st);
            assert_eq!(r2.unwrap().state(), rng.state());
            assert_eq!(export_state(&back, None).len() + RngState::ENCODED_LEN, blob.len());
        }
    }

    #[test]
    fn dimension_mismatch() {
        let st = SagState::new(3, vec![0.0; 2], SagOptions::default());
        let blob = export_state(&st, None);
        let other = SparseDataset::from_dense(&vec![vec![1.0, 2.0, 3.0]; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(import_state(&blob, &other, false), Err(Error::Dimension { .. })));
    }

    #[test]
    fn corrupted_blobs_rejected() {
        let st = SagState::new(3, vec![0.0; 2], SagOptions::default());
        let blob = export_state(&st, None);
        assert!(import_state(&blob[..blob.len() - 1], &ds(), false).is_err());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(import_state(&bad, &ds(), false).is_err());
        let mut extra = blob;
        extra.push(0);
        assert!(import_state(&extra, &ds(), false).is_err());
    }

    #[test]
    fn centering_on_import() {
        let ds = ds();
        let m = LossModel::logistic(0.05);
        let mut st = SagState::new(3, vec![0.1, -0.2], SagOptions::basic());
        for i in [0, 1, 2, 1] {
            st.step(&m, &ds, i, 0.5).unwrap();
        }
        let (c, _) = import_state(&export_state(&st, None), &ds, true).unwrap();
        assert!(c.d.iter().all(|v| v.abs() <= 1e-12));
        let scalar = SagState::new(3, vec![0.0; 2], SagOptions::default());
        assert!(import_state(&export_state(&scalar, None), &ds, true).is_err());
    }

    #[test]
    fn jit_round_trip_through_dense_state() {
        let ds = ds();
        let m = LossModel::logistic(0.05);
        let mut jit = JitState::new(3, vec![0.0; 2], true);
        for i in [0, 1, 2, 0] {
            jit.step(&m, &ds, i, 0.5).unwrap();
        }
        let snap = jit.to_sag_state();
        let back = JitState::from_sag_state(snap.clone()).unwrap();
        assert_eq!(back.finalize(), snap.x);
    }
}
