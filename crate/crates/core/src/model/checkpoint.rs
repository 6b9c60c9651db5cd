//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "ORDLABCK"
//! version      u32 LE
//! config_len   u32 LE, then config_len bytes of UTF-8 `key=value\n` lines
//! n_params     u32 LE
//! per param:   name_len u32, name bytes, rank u32, dims u64 × rank,
//!              data f64 LE × product(dims)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{HeadKind, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::numerics::{Array, ParamSet};
use crate::quantiser::QuantiserSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ORDLABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
}

fn config_text(net: &Network, seed: u64) -> String {
    let c = net.config();
    let q = net.quantiser();
    let components = match c.head {
        HeadKind::Categorical => 0,
        HeadKind::LogisticMixture { components } => components,
    };
    // f64 Display is the shortest representation that round-trips exactly.
    format!(
        "bins={}\nlevels={}\nwidth={}\nlayers={}\nhead={}\ncomponents={}\npositional={}\n\
         quantiser.lower={}\nquantiser.upper={}\nseed={}\n",
        c.bins,
        c.levels,
        c.width,
        c.layers,
        c.head.name(),
        components,
        c.positional,
        q.lower(),
        q.upper(),
        seed
    )
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint while reading {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = config_text(&self.network, self.seed);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let params = self.network.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, a) in params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in a.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad config line `{l}`")))
            })
            .collect::<Result<_>>()?;
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("checkpoint config lacks `{k}`")))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value `{v}` for `{k}`")))
        }
        let head = match get("head")? {
            "categorical" => HeadKind::Categorical,
            "mixture" => HeadKind::LogisticMixture {
                components: parse("components", get("components")?)?,
            },
            other => return Err(Error::Format(format!("unknown head `{other}`"))),
        };
        let config = NetworkConfig {
            bins: parse("bins", get("bins")?)?,
            levels: parse("levels", get("levels")?)?,
            width: parse("width", get("width")?)?,
            layers: parse("layers", get("layers")?)?,
            head,
            positional: parse("positional", get("positional")?)?,
        };
        let quantiser = QuantiserSpec::new(
            parse("quantiser.lower", get("quantiser.lower")?)?,
            parse("quantiser.upper", get("quantiser.upper")?)?,
            config.levels,
        )?;
        let seed = parse("seed", get("seed")?)?;

        let n = r.u32("parameter count")?;
        let mut params = ParamSet::new();
        for _ in 0..n {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(Error::Format(format!(
                    "implausible rank {rank} for `{name}`"
                )));
            }
            let shape = (0..rank)
                .map(|_| r.u64("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("shape overflow".into()))?;
            let bytes = r.take(count.saturating_mul(8), "parameter data")?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(name, Array::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok(Self {
            network: Network::from_parts(config, quantiser, params)?,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
