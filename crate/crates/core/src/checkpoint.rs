//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "SNETCKPT"
//! version   u32
//! increment u32
//! layers    u32                      hidden layer count
//! per layer u8 activation, u64 rows, u64 cols, rows·cols f64, rows f64 bias
//! output    u64 rows, u64 cols, rows·cols f64
//! has_state u8                       0 or 1
//! state     "CONS", f64 λ_f, f64 λ_ewc,
//!           network block (θ_old), gradient block (Fisher),
//!           u64 rows, u64 cols, rows·cols f64 (frozen representations)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::consolidation::{Coefficients, ConsolidationState};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::network::{Activation, DenseLayer, GradientSet, NetworkParams};

pub const MAGIC: &[u8; 8] = b"SNETCKPT";
pub const VERSION: u32 = 1;
const STATE_TAG: &[u8; 4] = b"CONS";
const MAX_DIM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Zero-based increment after which the checkpoint was taken.
    pub increment: u32,
    pub params: NetworkParams,
    pub state: Option<ConsolidationState>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.increment.to_le_bytes())?;
        write_network(&mut w, &self.params)?;
        match &self.state {
            None => w.write_all(&[0])?,
            Some(s) => {
                w.write_all(&[1])?;
                w.write_all(STATE_TAG)?;
                write_f64s(&mut w, &[s.coefficients.lambda_f, s.coefficients.lambda_ewc])?;
                write_network(&mut w, &s.theta_old)?;
                write_gradients(&mut w, &s.fisher)?;
                write_matrix(&mut w, &s.support_reps_old)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let increment = read_u32(&mut r)?;
        let params = read_network(&mut r)?;
        let state = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let mut tag = [0u8; 4];
                r.read_exact(&mut tag)?;
                if &tag != STATE_TAG {
                    return Err(Error::Format("bad consolidation section tag".into()));
                }
                let lambdas = read_f64s(&mut r, 2)?;
                let theta_old = read_network(&mut r)?;
                let fisher = read_gradients(&mut r)?;
                let reps = read_matrix(&mut r)?;
                Some(ConsolidationState::new(
                    theta_old,
                    fisher,
                    reps,
                    Coefficients {
                        lambda_f: lambdas[0],
                        lambda_ewc: lambdas[1],
                    },
                )?)
            }
            other => return Err(Error::Format(format!("bad state flag {other}"))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            increment,
            params,
            state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_dims<W: Write>(w: &mut W, rows: usize, cols: usize) -> Result<()> {
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    write_dims(w, m.rows(), m.cols())?;
    write_f64s(w, m.data())
}

fn write_network<W: Write>(w: &mut W, p: &NetworkParams) -> Result<()> {
    w.write_all(&(p.hidden.len() as u32).to_le_bytes())?;
    for layer in &p.hidden {
        w.write_all(&[layer.activation.tag()])?;
        write_matrix(w, &layer.weights)?;
        write_f64s(w, &layer.bias)?;
    }
    write_matrix(w, &p.output)
}

fn write_gradients<W: Write>(w: &mut W, g: &GradientSet) -> Result<()> {
    w.write_all(&(g.hidden.len() as u32).to_le_bytes())?;
    for (m, b) in &g.hidden {
        write_matrix(w, m)?;
        write_f64s(w, b)?;
    }
    write_matrix(w, &g.output)
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_dim<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let v = u64::from_le_bytes(b);
    if v >= MAX_DIM {
        return Err(Error::Format(format!("implausible dimension {v}")));
    }
    Ok(v as usize)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let rows = read_dim(r)?;
    let cols = read_dim(r)?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
    Matrix::new(rows, cols, read_f64s(r, n)?)
}

fn read_network<R: Read>(r: &mut R) -> Result<NetworkParams> {
    let layers = read_u32(r)? as usize;
    let mut hidden = Vec::with_capacity(layers.min(64));
    for _ in 0..layers {
        let tag = read_u8(r)?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
        let weights = read_matrix(r)?;
        let bias = read_f64s(r, weights.rows())?;
        hidden.push(DenseLayer {
            weights,
            bias,
            activation,
        });
    }
    let output = read_matrix(r)?;
    NetworkParams::from_parts(hidden, output).map_err(|e| Error::Format(e.to_string()))
}

fn read_gradients<R: Read>(r: &mut R) -> Result<GradientSet> {
    let layers = read_u32(r)? as usize;
    let mut hidden = Vec::with_capacity(layers.min(64));
    for _ in 0..layers {
        let m = read_matrix(r)?;
        let b = read_f64s(r, m.rows())?;
        hidden.push((m, b));
    }
    Ok(GradientSet {
        hidden,
        output: read_matrix(r)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SeededRng;
    use crate::network::tests::{random_matrix, random_net};
    use proptest::prelude::*;

    fn state_for(params: &NetworkParams, seed: u64) -> ConsolidationState {
        let mut fisher = GradientSet::zeros_like(params);
        let mut rng = SeededRng::new(seed);
        for buf in fisher.buffers_mut() {
            for v in buf {
                *v = rng.uniform() * 1e-3;
            }
        }
        ConsolidationState::new(
            params.clone(),
            fisher,
            random_matrix(seed + 1, 3, params.representation_dim()),
            Coefficients {
                lambda_f: 0.5,
                lambda_ewc: 1234.5,
            },
        )
        .unwrap()
    }

    fn round_trip(ck: &Checkpoint) -> (Vec<u8>, Checkpoint) {
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        (bytes, back)
    }

    fn bits(p: &NetworkParams) -> Vec<u64> {
        p.buffers().iter().flat_map(|b| b.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = random_net(3, &[6, 5, 4], Activation::Tanh, 3);
        let ck = Checkpoint {
            increment: 2,
            params: params.clone(),
            state: Some(state_for(&params, 9)),
        };
        let (bytes, back) = round_trip(&ck);
        assert_eq!(back, ck);
        assert_eq!(bits(&back.params), bits(&ck.params));
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn header_layout() {
        let params = random_net(1, &[2, 3], Activation::Relu, 2);
        let ck = Checkpoint {
            increment: 0,
            params,
            state: None,
        };
        let (bytes, back) = round_trip(&ck);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        // 20 header + (1 + 16 + 6·8 + 3·8) + (16 + 6·8) + 1 flag
        assert_eq!(bytes.len(), 20 + 89 + 64 + 1);
        assert!(back.state.is_none());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let params = random_net(2, &[3, 2], Activation::Relu, 2);
        let ck = Checkpoint {
            increment: 1,
            params: params.clone(),
            state: Some(state_for(&params, 4)),
        };
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[8] = 99;
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Format(_))));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(Checkpoint::read_from(truncated), Err(Error::Io(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Checkpoint::read_from(trailing.as_slice()).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = random_net(5, &[4, 4], Activation::Identity, 2);
        let ck = Checkpoint {
            increment: 3,
            params,
            state: None,
        };
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_networks_round_trip(
            seed in any::<u64>(),
            dims in prop::collection::vec(1usize..6, 1..4),
            k in 2usize..5,
            with_state in any::<bool>(),
        ) {
            let params = random_net(seed, &dims, Activation::Relu, k);
            let state = with_state.then(|| state_for(&params, seed));
            let ck = Checkpoint { increment: 1, params, state };
            let (_, back) = round_trip(&ck);
            prop_assert_eq!(bits(&back.params), bits(&ck.params));
            prop_assert_eq!(back, ck);
        }
    }
}
