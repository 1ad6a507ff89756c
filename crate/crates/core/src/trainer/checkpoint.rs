use std::path::Path;

use crate::container::{ByteReader, ByteWriter};
use crate::data::{Mask, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::{Layer, Model};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"QTCK";

const DENSE: u8 = 0;
const CONV: u8 = 1;
const RELU: u8 = 2;
const MAXPOOL: u8 = 3;
const FLATTEN: u8 = 4;

/// A model plus everything needed to continue its run.
///
/// Layout after the container header (layer count as record count): input
/// shape, classes, taps, optional input normalization, one record per layer
/// (kind tag, then shapes and `f32` payloads), and optional trailing sections
/// for optimizer velocity, the epoch cursor, the frozen mask, the free-training
/// perturbation, and the config fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    /// Next epoch to run.
    pub epoch: usize,
    pub mask: Option<Mask>,
    pub delta: Option<Tensor>,
    pub fingerprint: String,
}

impl Checkpoint {
    pub fn of_model(model: Model) -> Self {
        Self {
            model,
            optimizer: None,
            epoch: 0,
            mask: None,
            delta: None,
            fingerprint: String::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = ByteWriter::with_header(MAGIC, m.layers().len() as u32);
        for d in m.input_shape() {
            w.usize(d);
        }
        w.usize(m.classes());
        w.usize(m.taps().len());
        for &t in m.taps() {
            w.usize(t);
        }
        match m.input_norm() {
            Some(n) => {
                w.u8(1);
                w.usize(n.mean.len());
                w.f32_slice(&n.mean);
                w.f32_slice(&n.std);
            }
            None => w.u8(0),
        }
        for layer in m.layers() {
            match layer {
                Layer::Dense { weight, bias } => {
                    w.u8(DENSE);
                    w.tensor(weight);
                    w.tensor(bias);
                }
                Layer::Conv2d { weight, bias, pad } => {
                    w.u8(CONV);
                    w.usize(*pad);
                    w.tensor(weight);
                    w.tensor(bias);
                }
                Layer::Relu => w.u8(RELU),
                Layer::MaxPool { size } => {
                    w.u8(MAXPOOL);
                    w.usize(*size);
                }
                Layer::Flatten => w.u8(FLATTEN),
            }
        }
        match &self.optimizer {
            Some(o) => {
                w.u8(1);
                w.f64(o.lr);
                w.f64(o.momentum);
                w.f64(o.weight_decay);
                w.usize(o.velocity().len());
                for v in o.velocity() {
                    w.tensor(v);
                }
            }
            None => w.u8(0),
        }
        w.usize(self.epoch);
        match &self.mask {
            Some(mask) => {
                w.u8(1);
                w.usize(mask.len());
                w.u64(mask.source());
                let removed = mask.removed();
                w.usize(removed.len());
                for i in removed {
                    w.usize(i);
                }
            }
            None => w.u8(0),
        }
        match &self.delta {
            Some(d) => {
                w.u8(1);
                w.tensor(d);
            }
            None => w.u8(0),
        }
        w.usize(self.fingerprint.len());
        for b in self.fingerprint.bytes() {
            w.u8(b);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, count) = ByteReader::open(bytes, MAGIC, "checkpoint")?;
        let input_shape = [r.usize()?, r.usize()?, r.usize()?];
        let classes = r.usize()?;
        let n_taps = r.usize()?;
        let taps = (0..n_taps).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let norm = match r.u8()? {
            0 => None,
            1 => {
                let c = r.usize()?;
                let mean = r.f32_vec(c)?;
                let std = r.f32_vec(c)?;
                Some(NormalizationStats::new(mean, std)?)
            }
            t => return Err(r.err(format!("bad normalization flag {t}"))),
        };
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = r.offset();
            layers.push(match r.u8()? {
                DENSE => Layer::Dense {
                    weight: r.tensor()?,
                    bias: r.tensor()?,
                },
                CONV => {
                    let pad = r.usize()?;
                    Layer::Conv2d {
                        pad,
                        weight: r.tensor()?,
                        bias: r.tensor()?,
                    }
                }
                RELU => Layer::Relu,
                MAXPOOL => Layer::MaxPool { size: r.usize()? },
                FLATTEN => Layer::Flatten,
                t => return Err(r.err_at(at, format!("unknown layer kind {t}"))),
            });
        }
        let at = r.offset();
        let model = Model::new(input_shape, classes, layers, taps, norm).map_err(|e| r.err_at(at, e.to_string()))?;
        let optimizer = match r.u8()? {
            0 => None,
            _ => {
                let (lr, mu, wd) = (r.f64()?, r.f64()?, r.f64()?);
                let n = r.usize()?;
                let velocity = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                let mut o = OptimizerState::new(lr.max(f64::MIN_POSITIVE), mu, wd)?.with_velocity(velocity);
                o.lr = lr;
                Some(o)
            }
        };
        let epoch = r.usize()?;
        let mask = match r.u8()? {
            0 => None,
            _ => {
                let n = r.usize()?;
                let source = r.u64()?;
                let k = r.usize()?;
                let removed = (0..k).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
                Some(Mask::from_removed(n, &removed, source)?)
            }
        };
        let delta = match r.u8()? {
            0 => None,
            _ => Some(r.tensor()?),
        };
        let len = r.usize()?;
        let fp = (0..len).map(|_| r.u8()).collect::<Result<Vec<_>>>()?;
        let fingerprint = String::from_utf8(fp).map_err(|_| r.err("fingerprint is not UTF-8"))?;
        r.finish()?;
        Ok(Self {
            model,
            optimizer,
            epoch,
            mask,
            delta,
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvNetSpec;

    #[test]
    fn weights_round_trip_bit_exact() {
        let mut model = ConvNetSpec::new([3, 8, 8], 4, &[4, 6]).build(3).unwrap();
        model
            .set_input_norm(Some(NormalizationStats::new(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 0.5]).unwrap()))
            .unwrap();
        let mut ck = Checkpoint::of_model(model);
        ck.epoch = 7;
        ck.mask = Some(Mask::from_removed(10, &[2, 5], 9).unwrap());
        ck.fingerprint = "abc123".into();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let ck = Checkpoint::of_model(ConvNetSpec::new([1, 4, 4], 2, &[2]).build(0).unwrap());
        let mut bytes = ck.to_bytes();
        bytes[0] = b'X';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checkpoint"), "{err}");
    }
}
