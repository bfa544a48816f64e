//! Kernel files and training checkpoints, both stored as safetensors archives
//! of little-endian f64 arrays with one JSON metadata entry.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelgen::{Kernel, Provenance};
use crate::nets::{DiscriminatorParams, GeneratorParams, ParamSet, ParamTensor};
use crate::optim::{Adam, AdamConfig};

const META_KEY: &str = "metakernel";
pub const KERNEL_FORMAT: &str = "metakernel-kernel";
pub const CHECKPOINT_FORMAT: &str = "metakernel-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

fn archive_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Archive {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_bytes(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn encode<M: Serialize>(tensors: &[(String, Vec<usize>, Vec<u8>)], meta: &M) -> Result<Vec<u8>> {
    let views: Vec<(String, TensorView<'_>)> = tensors
        .iter()
        .map(|(n, s, b)| {
            TensorView::new(Dtype::F64, s.clone(), b)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Config(format!("tensor {n}: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut info = HashMap::new();
    info.insert(META_KEY.to_string(), serde_json::to_string(meta)?);
    safetensors::serialize(views, &Some(info)).map_err(|e| Error::Config(e.to_string()))
}

struct Decoded<M> {
    meta: M,
    tensors: HashMap<String, (Vec<usize>, Vec<f64>)>,
}

fn decode<M: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<Decoded<M>> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| archive_err(path, e))?;
    let raw = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| archive_err(path, "missing metadata header"))?;
    let meta: M = serde_json::from_str(raw).map_err(|e| archive_err(path, e))?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| archive_err(path, e))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(archive_err(path, format!("tensor {name} is not f64")));
        }
        tensors.insert(name, (view.shape().to_vec(), from_bytes(view.data())));
    }
    Ok(Decoded { meta, tensors })
}

/// Writes `bytes` to `path` through a temporary file in the same directory and
/// an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelMeta {
    format: String,
    version: u32,
    size: usize,
    scale: usize,
    provenance: String,
}

pub fn kernel_to_bytes(k: &Kernel) -> Result<Vec<u8>> {
    let meta = KernelMeta {
        format: KERNEL_FORMAT.into(),
        version: FORMAT_VERSION,
        size: k.size(),
        scale: k.scale(),
        provenance: k.provenance().as_str().into(),
    };
    encode(&[("kernel".into(), vec![k.size(), k.size()], to_bytes(k.values()))], &meta)
}

pub fn kernel_from_bytes(path: &Path, bytes: &[u8]) -> Result<Kernel> {
    let d: Decoded<KernelMeta> = decode(path, bytes)?;
    if d.meta.format != KERNEL_FORMAT {
        return Err(archive_err(path, format!("not a kernel file (format {})", d.meta.format)));
    }
    if d.meta.version > FORMAT_VERSION {
        return Err(archive_err(path, format!("unsupported version {}", d.meta.version)));
    }
    let (shape, values) = d
        .tensors
        .get("kernel")
        .ok_or_else(|| archive_err(path, "missing kernel tensor"))?;
    if shape != &[d.meta.size, d.meta.size] {
        return Err(archive_err(path, "kernel shape disagrees with header"));
    }
    let prov = Provenance::parse(&d.meta.provenance)
        .ok_or_else(|| archive_err(path, format!("unknown provenance {}", d.meta.provenance)))?;
    Kernel::new(d.meta.size, d.meta.scale, prov, values.clone())
}

pub fn save_kernel(path: &Path, k: &Kernel) -> Result<()> {
    write_atomic(path, &kernel_to_bytes(k)?)
}

pub fn load_kernel(path: &Path) -> Result<Kernel> {
    let bytes = fs::read(path).map_err(|e| archive_err(path, e))?;
    kernel_from_bytes(path, &bytes)
}

/// Full training state: both networks, outer optimizer moments and the
/// number of completed outer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub step: usize,
    pub seed: u64,
    pub adam: Option<(Adam, Adam)>,
    /// Free-form configuration snapshot (JSON).
    pub config: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    version: u32,
    generator_width: usize,
    discriminator_width: usize,
    step: usize,
    seed: u64,
    adam_generator: Option<AdamMeta>,
    adam_discriminator: Option<AdamMeta>,
    config: Option<String>,
}

fn push_set(out: &mut Vec<(String, Vec<usize>, Vec<u8>)>, prefix: &str, set: &ParamSet) {
    for t in &set.tensors {
        out.push((format!("{prefix}{}", t.name), t.shape.clone(), to_bytes(&t.data)));
    }
}

fn take_set(
    path: &Path,
    tensors: &HashMap<String, (Vec<usize>, Vec<f64>)>,
    prefix: &str,
    layout: &ParamSet,
) -> Result<ParamSet> {
    let mut out = Vec::with_capacity(layout.tensors.len());
    for t in &layout.tensors {
        let key = format!("{prefix}{}", t.name);
        let (shape, data) = tensors
            .get(&key)
            .ok_or_else(|| archive_err(path, format!("missing tensor {key}")))?;
        if shape != &t.shape {
            return Err(archive_err(path, format!("tensor {key} has shape {shape:?}, expected {:?}", t.shape)));
        }
        out.push(ParamTensor::new(t.name.clone(), shape.clone(), data.clone()));
    }
    Ok(ParamSet::new(out))
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    push_set(&mut tensors, "", &ck.generator.params);
    push_set(&mut tensors, "", &ck.discriminator.params);
    push_set(&mut tensors, "", &ck.discriminator.buffers);
    if let Some((ag, ad)) = &ck.adam {
        push_set(&mut tensors, "adam.m.", &ag.m);
        push_set(&mut tensors, "adam.v.", &ag.v);
        push_set(&mut tensors, "adam.m.", &ad.m);
        push_set(&mut tensors, "adam.v.", &ad.v);
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        version: FORMAT_VERSION,
        generator_width: ck.generator.width,
        discriminator_width: ck.discriminator.width,
        step: ck.step,
        seed: ck.seed,
        adam_generator: ck.adam.as_ref().map(|(a, _)| AdamMeta { config: a.config, t: a.t }),
        adam_discriminator: ck.adam.as_ref().map(|(_, a)| AdamMeta { config: a.config, t: a.t }),
        config: ck.config.clone(),
    };
    encode(&tensors, &meta)
}

pub fn checkpoint_from_bytes(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let d: Decoded<CheckpointMeta> = decode(path, bytes)?;
    let m = &d.meta;
    if m.format != CHECKPOINT_FORMAT {
        return Err(archive_err(path, format!("not a checkpoint (format {})", m.format)));
    }
    if m.version > FORMAT_VERSION {
        return Err(archive_err(path, format!("unsupported version {}", m.version)));
    }
    let g_layout = crate::nets::init_generator(
        2,
        &crate::nets::GeneratorConfig {
            width: m.generator_width,
            init_noise: 0.0,
        },
        0,
    )?;
    let d_layout = crate::nets::init_discriminator(
        &crate::nets::DiscriminatorConfig {
            width: m.discriminator_width,
        },
        0,
    )?;
    let gp = take_set(path, &d.tensors, "", &g_layout.params)?;
    let dp = take_set(path, &d.tensors, "", &d_layout.params)?;
    let db = take_set(path, &d.tensors, "", &d_layout.buffers)?;
    let adam = match (&m.adam_generator, &m.adam_discriminator) {
        (Some(ag), Some(ad)) => Some((
            Adam {
                config: ag.config,
                t: ag.t,
                m: take_set(path, &d.tensors, "adam.m.", &g_layout.params)?,
                v: take_set(path, &d.tensors, "adam.v.", &g_layout.params)?,
            },
            Adam {
                config: ad.config,
                t: ad.t,
                m: take_set(path, &d.tensors, "adam.m.", &d_layout.params)?,
                v: take_set(path, &d.tensors, "adam.v.", &d_layout.params)?,
            },
        )),
        _ => None,
    };
    Ok(Checkpoint {
        generator: GeneratorParams::from_params(m.generator_width, gp)?,
        discriminator: DiscriminatorParams::from_parts(m.discriminator_width, dp, db)?,
        step: m.step,
        seed: m.seed,
        adam,
        config: m.config.clone(),
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint_to_bytes(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| archive_err(path, e))?;
    checkpoint_from_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelgen::{sample_gaussian_kernel, GaussianSpec};
    use crate::nets::{init_discriminator, init_generator, DiscriminatorConfig, GeneratorConfig};

    #[test]
    fn kernel_round_trip_is_bit_exact() {
        let k = sample_gaussian_kernel(&GaussianSpec::new(0.3, 2.0, 0.7).unwrap(), 11).unwrap();
        let bytes = kernel_to_bytes(&k).unwrap();
        let back = kernel_from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(k, back);
        assert_eq!(bytes, kernel_to_bytes(&back).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let g = init_generator(2, &GeneratorConfig { width: 3, init_noise: 0.1 }, 1).unwrap();
        let d = init_discriminator(&DiscriminatorConfig { width: 5 }, 2).unwrap();
        let adam = (
            Adam::new(&g.params, AdamConfig::with_lr(1e-4)),
            Adam::new(&d.params, AdamConfig::with_lr(1e-4)),
        );
        let ck = Checkpoint {
            generator: g,
            discriminator: d,
            step: 7,
            seed: 42,
            adam: Some(adam),
            config: Some("{}".into()),
        };
        let bytes = checkpoint_to_bytes(&ck).unwrap();
        let back = checkpoint_from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(ck, back);
        assert_eq!(bytes, checkpoint_to_bytes(&back).unwrap());
    }

    #[test]
    fn wrong_format_rejected() {
        let k = Kernel::delta(11, 2).unwrap();
        let bytes = kernel_to_bytes(&k).unwrap();
        assert!(checkpoint_from_bytes(Path::new("mem"), &bytes).is_err());
        assert!(kernel_from_bytes(Path::new("mem"), b"garbage").is_err());
    }
}
