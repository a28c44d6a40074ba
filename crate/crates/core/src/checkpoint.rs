//! Checkpoint files: a line-oriented text header followed by raw little-endian `f64`
//! blocks, one per tensor, in header order.
//!
//! ```text
//! vgm2p-checkpoint 1
//! kind avg_velocity
//! seed 7
//! config_hash 3f9a...
//! meta action_dim 3
//! activations tanh,tanh
//! tensor layer0.weight 64x12
//! tensor layer0.bias 64
//! ...
//! end
//! <binary>
//! ```

use crate::error::{Error, Result};
use crate::mlp::{Activation, Layer, MlpParams};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const MAGIC: &str = "vgm2p-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub activations: Vec<Activation>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_mlp(kind: &str, net: &MlpParams, config_hash: &str) -> Self {
        let mut tensors = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            tensors.push((format!("layer{i}.weight"), layer.weight.clone()));
            tensors.push((format!("layer{i}.bias"), layer.bias.clone()));
        }
        Self {
            kind: kind.to_string(),
            seed: net.seed,
            config_hash: config_hash.to_string(),
            meta: BTreeMap::new(),
            activations: net.activations.clone(),
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::format("checkpoint", format!("missing meta `{key}`")))?
            .parse()
            .map_err(|_| Error::format("checkpoint", format!("meta `{key}` is not an integer")))
    }

    /// Reassembles the network from `layer{i}.weight` / `layer{i}.bias` tensors.
    pub fn to_mlp(&self) -> Result<MlpParams> {
        let mut layers = Vec::new();
        for i in 0.. {
            let (Some(w), Some(b)) = (
                self.tensor(&format!("layer{i}.weight")),
                self.tensor(&format!("layer{i}.bias")),
            ) else {
                break;
            };
            layers.push(Layer::new(w.clone(), b.clone())?);
        }
        let mut net = MlpParams::from_layers(layers, self.activations.clone())?;
        net.seed = self.seed;
        Ok(net)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("kind {}\n", self.kind));
        header.push_str(&format!("seed {}\n", self.seed));
        header.push_str(&format!("config_hash {}\n", self.config_hash));
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let acts: Vec<String> = self.activations.iter().map(|a| a.to_string()).collect();
        header.push_str(&format!("activations {}\n", acts.join(",")));
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        let next_line = |reader: &mut BufReader<R>, line: &mut String| -> Result<String> {
            line.clear();
            if reader.read_line(line)? == 0 {
                return Err(Error::format("checkpoint", "unexpected end of header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut reader, &mut line)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic line"));
        }
        let mut ck = Checkpoint {
            kind: String::new(),
            seed: 0,
            config_hash: String::new(),
            meta: BTreeMap::new(),
            activations: Vec::new(),
            tensors: Vec::new(),
        };
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let l = next_line(&mut reader, &mut line)?;
            if l == "end" {
                break;
            }
            let (key, rest) = l.split_once(' ').unwrap_or((l.as_str(), ""));
            match key {
                "kind" => ck.kind = rest.to_string(),
                "seed" => {
                    ck.seed = rest
                        .parse()
                        .map_err(|_| Error::format("checkpoint", "bad seed"))?
                }
                "config_hash" => ck.config_hash = rest.to_string(),
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::format("checkpoint", "bad meta line"))?;
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                "activations" => {
                    ck.activations = rest
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?
                }
                "tensor" => {
                    let (name, dims) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::format("checkpoint", "bad tensor line"))?;
                    let shape = dims
                        .split('x')
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| Error::format("checkpoint", "bad tensor shape"))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    shapes.push((name.to_string(), shape));
                }
                other => {
                    return Err(Error::format(
                        "checkpoint",
                        format!("unknown header key `{other}`"),
                    ))
                }
            }
        }
        let mut buf = [0u8; 8];
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| Error::format("checkpoint", format!("truncated tensor `{name}`")))?;
                data.push(f64::from_le_bytes(buf));
            }
            ck.tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
