//! Binary checkpoints.
//!
//! Layout (little-endian):
//! `"LAVSCKPT"`, `u32 version`, `u32 len` + config text, `u64 step`,
//! `u64 rng seed`, `u64 rng stream`, `u128 rng counter`, `u64 adam t`, `u32 entry count`, then
//! per entry `u32 len` + name, `u32 rank`, `rank × u64` extents, f64 data.
//! Parameters are stored under `param/`, Adam moments under `adam.m/` and
//! `adam.v/`.
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use lightavseg_core::optim::AdamW;
use lightavseg_core::params::ParamStore;
use lightavseg_core::rng::RngState;
use lightavseg_core::train::Trainer;
use lightavseg_core::Tensor;

use crate::config::RunConfig;
use crate::error::{format_err, io_err, Result};
use crate::tensor_io::{expect_magic, read_shape_and_data, read_u32, read_u64, write_shape_and_data};

pub const MAGIC: &[u8; 8] = b"LAVSCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub rng: RngState,
    pub params: ParamStore,
    pub adam_t: u64,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, config: &RunConfig) -> Self {
        let mut config = config.clone();
        config.model = t.model.clone();
        config.train = t.config.clone();
        Self {
            config,
            step: t.step,
            rng: t.rng.clone(),
            params: t.params.clone(),
            adam_t: t.optim.t,
            adam_m: t.optim.m.clone(),
            adam_v: t.optim.v.clone(),
        }
    }

    /// Rebuilds the trainer exactly as it was when saved.
    pub fn to_trainer(&self) -> Result<Trainer> {
        let mut t = Trainer::new(self.config.model.clone(), self.config.train.clone())?;
        self.config.model.check_params(&self.params)?;
        t.params = self.params.clone();
        t.step = self.step;
        t.rng = self.rng.clone();
        t.optim = AdamW { t: self.adam_t, m: self.adam_m.clone(), v: self.adam_v.clone(), ..t.optim };
        Ok(t)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let io = |e: std::io::Error| format_err!("{e}");
        let text = self.config.to_text();
        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&VERSION.to_le_bytes());
        head.extend_from_slice(&(text.len() as u32).to_le_bytes());
        head.extend_from_slice(text.as_bytes());
        head.extend_from_slice(&self.step.to_le_bytes());
        head.extend_from_slice(&self.rng.seed().to_le_bytes());
        head.extend_from_slice(&self.rng.stream().to_le_bytes());
        head.extend_from_slice(&self.rng.counter().to_le_bytes());
        head.extend_from_slice(&self.adam_t.to_le_bytes());
        let entries: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (format!("param/{n}"), t))
            .chain(self.adam_m.iter().map(|(n, t)| (format!("adam.m/{n}"), t)))
            .chain(self.adam_v.iter().map(|(n, t)| (format!("adam.v/{n}"), t)))
            .collect();
        head.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        w.write_all(&head).map_err(io)?;
        for (name, t) in entries {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            write_shape_and_data(w, t)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(format_err!("checkpoint version {version} is not supported (expected {VERSION})"));
        }
        let text = read_string(r)?;
        let config = RunConfig::parse(&text)?;
        let step = read_u64(r)?;
        let seed = read_u64(r)?;
        let stream = read_u64(r)?;
        let mut ctr = [0; 16];
        r.read_exact(&mut ctr).map_err(|e| format_err!("{e}"))?;
        let rng = RngState::restore(seed, stream, u128::from_le_bytes(ctr));
        let adam_t = read_u64(r)?;
        let n = read_u32(r)?;
        let mut params = ParamStore::new();
        let (mut adam_m, mut adam_v) = (BTreeMap::new(), BTreeMap::new());
        for _ in 0..n {
            let name = read_string(r)?;
            let t = read_shape_and_data(r)?;
            if let Some(p) = name.strip_prefix("param/") {
                params.insert(p, t);
            } else if let Some(p) = name.strip_prefix("adam.m/") {
                adam_m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix("adam.v/") {
                adam_v.insert(p.to_string(), t);
            } else {
                return Err(format_err!("unknown checkpoint entry `{name}`"));
            }
        }
        Ok(Self { config, step, rng, params, adam_t, adam_m, adam_v })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        self.write(&mut w)?;
        w.flush().map_err(io_err(path))
    }

    /// Loads and checks that the parameters fit the stored model config.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
        let c = Self::read(&mut r).map_err(|e| format_err!("{}: {e}", path.display()))?;
        c.config.model.check_params(&c.params)?;
        Ok(c)
    }
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(format_err!("string length {len} is implausible"));
    }
    let mut b = vec![0; len];
    r.read_exact(&mut b).map_err(|e| format_err!("{e}"))?;
    String::from_utf8(b).map_err(|e| format_err!("{e}"))
}
