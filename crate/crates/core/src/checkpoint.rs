//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `LNRFCKPT`, `u32` schema version, `u64`
//! length plus a JSON header, `u32` tensor count, then per tensor a `u16`
//! name length and name, `u8` dtype (0 = f32, 1 = f64), `u8` rank, `u64`
//! dims and the raw data. Trailing bytes are an error.

use std::io::{self, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colmap::{CameraModel, PoseSE3};
use crate::field::{FieldConfig, FieldError, HashField};
use crate::geometry::Aabb;
use crate::render::{OccupancyGrid, RenderSettings};
use crate::train::{Adam, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"LNRFCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("unsupported checkpoint schema version {found} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string, since it is a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Option<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub resolution: usize,
    pub decay: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub bounds: Aabb,
    pub camera: CameraModel,
    /// First training pose, a default viewpoint for previews.
    pub reference_pose: Option<PoseSE3>,
    pub render: RenderSettings,
    pub step: u64,
    pub adam_steps: u64,
    pub rng: RngState,
    pub grid: GridMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: TrainState,
}

enum Tensor<'a> {
    F32(&'a [f32]),
    F64(&'a [f64]),
}

impl Checkpoint {
    pub fn capture(
        state: &TrainState,
        train: &TrainConfig,
        render: &RenderSettings,
        camera: &CameraModel,
        reference_pose: Option<PoseSE3>,
    ) -> Self {
        let grid = &state.grid;
        Self {
            header: CheckpointHeader {
                field: *state.field.config(),
                train: train.clone(),
                bounds: *grid.bounds(),
                camera: camera.clone(),
                reference_pose,
                render: *render,
                step: state.step,
                adam_steps: state.adam.steps,
                rng: RngState::capture(&state.rng),
                grid: GridMeta {
                    resolution: grid.resolution(),
                    decay: grid.decay(),
                    threshold: grid.threshold(),
                },
            },
            state: state.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(SCHEMA_VERSION).unwrap();
        let json = serde_json::to_vec(&self.header).expect("header serializes");
        out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
        out.extend_from_slice(&json);
        let s = &self.state;
        let tensors = [
            ("params", Tensor::F32(&s.field.params)),
            ("adam.m", Tensor::F32(&s.adam.m)),
            ("adam.v", Tensor::F32(&s.adam.v)),
            ("grid.ema", Tensor::F32(s.grid.ema())),
            ("loss_history", Tensor::F64(&s.loss_history)),
        ];
        out.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
        for (name, t) in &tensors {
            out.write_u16::<LittleEndian>(name.len() as u16).unwrap();
            out.extend_from_slice(name.as_bytes());
            match t {
                Tensor::F32(d) => {
                    out.extend_from_slice(&[0, 1]);
                    out.write_u64::<LittleEndian>(d.len() as u64).unwrap();
                    d.iter().for_each(|v| out.write_f32::<LittleEndian>(*v).unwrap());
                }
                Tensor::F64(d) => {
                    out.extend_from_slice(&[1, 1]);
                    out.write_u64::<LittleEndian>(d.len() as u64).unwrap();
                    d.iter().for_each(|v| out.write_f64::<LittleEndian>(*v).unwrap());
                }
            }
        }
        out
    }

    /// Writes through a temporary sibling and renames, so readers never see
    /// a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = io::BufWriter::new(std::fs::File::create(&tmp)?);
            f.write_all(&self.to_bytes())?;
            f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(r.corrupt(0, "bad magic"));
        }
        let version = r.u32("schema version")?;
        if version != SCHEMA_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let hlen = r.u64("header length")?;
        let hstart = r.pos;
        let hbytes = r.take_u64(hlen, "header")?;
        let header: CheckpointHeader =
            serde_json::from_slice(hbytes).map_err(|e| r.corrupt(hstart, &format!("header json: {e}")))?;

        let count = r.u32("tensor count")?;
        let mut f32s: Vec<(String, Vec<f32>)> = Vec::new();
        let mut loss_history = None;
        for _ in 0..count {
            let at = r.pos;
            let nlen = r.u16("tensor name length")? as u64;
            let name = String::from_utf8(r.take_u64(nlen, "tensor name")?.to_vec())
                .map_err(|_| r.corrupt(at, "tensor name is not utf-8"))?;
            let dtype = r.take(1, "dtype")?[0];
            let ndim = r.take(1, "rank")?[0];
            let mut n = 1u64;
            for _ in 0..ndim {
                n = n
                    .checked_mul(r.u64("dimension")?)
                    .ok_or_else(|| r.corrupt(at, "tensor size overflows"))?;
            }
            match dtype {
                0 => {
                    let raw = r.take_u64(n.saturating_mul(4), &name)?;
                    let mut v = vec![0f32; n as usize];
                    LittleEndian::read_f32_into(raw, &mut v);
                    f32s.push((name, v));
                }
                1 => {
                    let raw = r.take_u64(n.saturating_mul(8), &name)?;
                    let mut v = vec![0f64; n as usize];
                    LittleEndian::read_f64_into(raw, &mut v);
                    if name == "loss_history" {
                        loss_history = Some(v);
                    }
                }
                d => return Err(r.corrupt(at, &format!("unknown dtype {d}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt(r.pos, "trailing bytes"));
        }

        let end = bytes.len() as u64;
        let mut get = |name: &str| {
            f32s.iter()
                .position(|(n, _)| n == name)
                .map(|i| f32s.swap_remove(i).1)
                .ok_or_else(|| CheckpointError::Corrupt {
                    offset: end,
                    reason: format!("missing tensor {name}"),
                })
        };
        let params = get("params")?;
        let m = get("adam.m")?;
        let v = get("adam.v")?;
        let ema = get("grid.ema")?;
        let loss_history = loss_history.ok_or_else(|| CheckpointError::Corrupt {
            offset: end,
            reason: "missing tensor loss_history".into(),
        })?;
        let bad = |reason: &str| CheckpointError::Corrupt {
            offset: end,
            reason: reason.into(),
        };
        let field = HashField::from_params(header.field, params)?;
        if m.len() != field.param_count() || v.len() != field.param_count() {
            return Err(bad("optimizer moments do not match the parameter count"));
        }
        let g = &header.grid;
        let grid = OccupancyGrid::from_ema(header.bounds, g.resolution, g.decay, g.threshold, ema)
            .ok_or_else(|| bad("occupancy grid does not match its resolution"))?;
        let rng = header.rng.restore().ok_or_else(|| bad("bad rng word position"))?;
        let state = TrainState {
            step: header.step,
            field,
            adam: Adam {
                m,
                v,
                steps: header.adam_steps,
            },
            grid,
            rng,
            loss_history,
        };
        Ok(Self { header, state })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, offset: usize, reason: &str) -> CheckpointError {
        CheckpointError::Corrupt {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take_u64(&mut self, n: u64, what: &str) -> Result<&'a [u8]> {
        let left = (self.bytes.len() - self.pos) as u64;
        if n > left {
            return Err(self.corrupt(self.bytes.len(), &format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(s)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take_u64(n as u64, what)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }
}
