use std::io::{Read, Write};
use std::path::Path;

use crate::numcore::Tensor;

use super::SigError;

/// Multichannel series sampled at a fixed rate, `channels × samples`.
///
/// Also used for continuous word embeddings, with one row per embedding
/// dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    data: Tensor<f32>,
}

/// `D × T` continuous embedding series (same container as neural data).
pub type EmbeddingSeries = TimeSeries;

impl TimeSeries {
    pub fn new(data: Tensor<f32>, sample_rate: f64) -> Result<Self, SigError> {
        if data.shape().len() != 2 {
            return Err(SigError::Shape(format!("expected channels × samples, got {:?}", data.shape())));
        }
        if data.cols() == 0 {
            return Err(SigError::Shape("series has no samples".into()));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(SigError::InvalidRate(sample_rate));
        }
        if !data.is_finite() {
            return Err(SigError::NonFinite);
        }
        Ok(TimeSeries { sample_rate, data })
    }

    pub fn from_rows(rows: &[Vec<f32>], sample_rate: f64) -> Result<Self, SigError> {
        let t = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != t) {
            return Err(SigError::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        let tensor = Tensor::from_vec(&[rows.len(), t], data).map_err(|e| SigError::Shape(e.to_string()))?;
        Self::new(tensor, sample_rate)
    }

    pub fn zeros(channels: usize, samples: usize, sample_rate: f64) -> Result<Self, SigError> {
        Self::new(Tensor::zeros(&[channels, samples]), sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.sample_rate
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        self.data.row(c)
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        self.data.row_mut(c)
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize) -> f32 {
        self.data.at(c, t)
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries, SigError> {
        if start >= end || end > self.samples() {
            return Err(SigError::Shape(format!(
                "slice [{start}, {end}) outside series of {} samples",
                self.samples()
            )));
        }
        let rows: Vec<Vec<f32>> = (0..self.channels())
            .map(|c| self.channel(c)[start..end].to_vec())
            .collect();
        TimeSeries::from_rows(&rows, self.sample_rate)
    }

    /// Applies `f` to each channel, producing a series of possibly different length.
    pub fn map_channels(
        &self,
        sample_rate: f64,
        mut f: impl FnMut(&[f32]) -> Vec<f32>,
    ) -> Result<TimeSeries, SigError> {
        let rows: Vec<Vec<f32>> = (0..self.channels()).map(|c| f(self.channel(c))).collect();
        TimeSeries::from_rows(&rows, sample_rate)
    }
}

const NTS_MAGIC: &[u8; 4] = b"NTS1";
const NTS_VERSION: u32 = 1;
const NTS_HEADER: usize = 4 + 4 + 4 + 8 + 8;

/// A raw NTS1 container: rate 0 is allowed here (per-word embedding files).
#[derive(Clone, Debug, PartialEq)]
pub struct NtsFile {
    pub sample_rate: f64,
    pub data: Tensor<f32>,
}

impl NtsFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, t) = (self.data.rows(), self.data.cols());
        let mut out = Vec::with_capacity(NTS_HEADER + 4 * c * t);
        out.extend_from_slice(NTS_MAGIC);
        out.extend_from_slice(&NTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&(t as u64).to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        for v in self.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SigError> {
        if bytes.len() < NTS_HEADER {
            return Err(SigError::Format("file shorter than NTS1 header".into()));
        }
        if &bytes[0..4] != NTS_MAGIC {
            return Err(SigError::Format("bad magic, expected NTS1".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != NTS_VERSION {
            return Err(SigError::Format(format!("unsupported NTS1 version {version}")));
        }
        let c = u32_at(8) as usize;
        let t = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let rate = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let n = (c as u64)
            .checked_mul(t)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| SigError::Format("NTS1 size overflow".into()))?;
        if (bytes.len() - NTS_HEADER) as u64 != n {
            return Err(SigError::Format(format!(
                "payload is {} bytes, header implies {n}",
                bytes.len() - NTS_HEADER
            )));
        }
        let data: Vec<f32> = bytes[NTS_HEADER..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let data = Tensor::from_vec(&[c, t as usize], data).map_err(|e| SigError::Format(e.to_string()))?;
        Ok(NtsFile {
            sample_rate: rate,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SigError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, SigError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

impl TimeSeries {
    pub fn to_nts(&self) -> NtsFile {
        NtsFile {
            sample_rate: self.sample_rate,
            data: self.data.clone(),
        }
    }

    pub fn write_nts(&self, path: &Path) -> Result<(), SigError> {
        self.to_nts().write(path)
    }

    pub fn read_nts(path: &Path) -> Result<Self, SigError> {
        let f = NtsFile::read(path)?;
        TimeSeries::new(f.data, f.sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let ts = TimeSeries::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], 40.0).unwrap();
        let b = ts.to_nts().to_bytes();
        assert_eq!(&b[0..4], b"NTS1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 40.0);
        // channel-major payload
        assert_eq!(f32::from_le_bytes(b[28..32].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(b[32..36].try_into().unwrap()), 2.0);
        assert_eq!(b.len(), 28 + 16);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let ts = TimeSeries::zeros(2, 3, 40.0).unwrap();
        let mut b = ts.to_nts().to_bytes();
        assert!(NtsFile::from_bytes(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(NtsFile::from_bytes(&b).is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(TimeSeries::zeros(1, 1, 0.0).is_err());
        assert!(TimeSeries::zeros(1, 0, 40.0).is_err());
        assert!(TimeSeries::from_rows(&[vec![f32::NAN]], 40.0).is_err());
    }

    proptest! {
        #[test]
        fn nts_round_trip(c in 1usize..5, t in 1usize..40, seed in any::<u32>()) {
            let data: Vec<f32> = (0..c * t).map(|i| ((i as u32 ^ seed) % 1000) as f32 * 0.37 - 100.0).collect();
            let ts = TimeSeries::new(Tensor::from_vec(&[c, t], data).unwrap(), 40.0).unwrap();
            let back = NtsFile::from_bytes(&ts.to_nts().to_bytes()).unwrap();
            prop_assert_eq!(TimeSeries::new(back.data, back.sample_rate).unwrap(), ts);
        }
    }
}
