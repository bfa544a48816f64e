//! Non-blind SR hook. The builtin bicubic upsampler ignores the kernel and
//! is only a weak baseline; real SR models are reached through an external
//! process speaking a file exchange protocol:
//! `input.png`, `kernel.kernel` and `scale.txt` in, `output.png` out.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::archive::save_kernel;
use crate::io::png::{read_image, write_png};
use crate::kernelgen::Kernel;
use crate::tensor::{Image, Tensor};

/// Parent directory for exchange temp dirs; the system temp dir otherwise.
pub const CACHE_DIR_ENV: &str = "METAKERNEL_CACHE_DIR";

pub const EXCHANGE_INPUT: &str = "input.png";
pub const EXCHANGE_KERNEL: &str = "kernel.kernel";
pub const EXCHANGE_SCALE: &str = "scale.txt";
pub const EXCHANGE_OUTPUT: &str = "output.png";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SrAdapterSpec {
    BuiltinBicubic,
    /// `command` runs under `sh -c` with `{dir}`, `{input}`, `{kernel}`,
    /// `{scale}` and `{output}` substituted.
    ExternalProcess {
        command: String,
        working_dir: Option<PathBuf>,
        timeout_s: f64,
    },
}

fn keys_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per output coordinate: four source indices and their weights. Output
/// pixel `o` sits at source position `o / scale`, the grid the degradation
/// model subsamples on.
fn taps(n_in: usize, scale: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..n_in * scale)
        .map(|o| {
            let s = o as f64 / scale as f64;
            let base = s.floor() as isize;
            let frac = s - base as f64;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let off = k as isize - 1;
                idx[k] = clamp_index(base + off, n_in);
                w[k] = keys_weight(frac - off as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic upsampling (Keys, a = −0.5), clipped to `[0, 1]`.
pub fn bicubic_upscale(lr: &Image, scale: usize) -> Result<Image> {
    if scale == 0 {
        return Err(Error::UnsupportedScale(scale));
    }
    let t = lr.tensor();
    let (c, h, w) = t.shape();
    let (oh, ow) = (h * scale, w * scale);
    let ty = taps(h, scale);
    let tx = taps(w, scale);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut rows = vec![0.0; h * ow];
    for ch in 0..c {
        let src = t.plane(ch);
        for y in 0..h {
            for (x, (idx, wt)) in tx.iter().enumerate() {
                rows[y * ow + x] = (0..4).map(|k| wt[k] * src[y * w + idx[k]]).sum();
            }
        }
        let dst = out.plane_mut(ch);
        for (y, (idx, wt)) in ty.iter().enumerate() {
            for x in 0..ow {
                let v: f64 = (0..4).map(|k| wt[k] * rows[idx[k] * ow + x]).sum();
                dst[y * ow + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image::new(out))
}

/// Pixel replication, for comparison.
pub fn nearest_upscale(lr: &Image, scale: usize) -> Result<Image> {
    if scale == 0 {
        return Err(Error::UnsupportedScale(scale));
    }
    let t = lr.tensor();
    let (c, h, w) = t.shape();
    let mut out = Tensor::zeros(c, h * scale, w * scale);
    for ch in 0..c {
        for y in 0..h * scale {
            let sy = clamp_index((y as f64 / scale as f64).round() as isize, h);
            for x in 0..w * scale {
                let sx = clamp_index((x as f64 / scale as f64).round() as isize, w);
                *out.at_mut(ch, y, x) = t.at(ch, sy, sx);
            }
        }
    }
    Ok(Image::new(out))
}

fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

fn spawn_reader<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn substitute(template: &str, dir: &Path, scale: usize) -> String {
    let p = |name: &str| dir.join(name).display().to_string();
    template
        .replace("{dir}", &dir.display().to_string())
        .replace("{input}", &p(EXCHANGE_INPUT))
        .replace("{kernel}", &p(EXCHANGE_KERNEL))
        .replace("{scale}", &scale.to_string())
        .replace("{output}", &p(EXCHANGE_OUTPUT))
}

fn run_external(
    lr: &Image,
    kernel: &Kernel,
    scale: usize,
    command: &str,
    working_dir: Option<&Path>,
    timeout: Duration,
) -> Result<Image> {
    let root = cache_root();
    std::fs::create_dir_all(&root)?;
    // Dropped on every return path, which removes the exchange directory.
    let tmp = tempfile::Builder::new().prefix("metakernel-sr-").tempdir_in(&root)?;
    let dir = tmp.path();
    write_png(&dir.join(EXCHANGE_INPUT), lr)?;
    save_kernel(&dir.join(EXCHANGE_KERNEL), kernel)?;
    std::fs::write(dir.join(EXCHANGE_SCALE), format!("{scale}\n"))?;

    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(substitute(command, dir, scale))
        .current_dir(working_dir.unwrap_or(dir))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // Own process group, so a timeout also reaches grandchildren that would
    // otherwise keep the output pipes open.
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd.spawn()?;
    let out_h = spawn_reader(child.stdout.take().expect("piped stdout"));
    let err_h = spawn_reader(child.stderr.take().expect("piped stderr"));
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break Some(s);
        }
        if start.elapsed() >= timeout {
            #[cfg(unix)]
            let _ = Command::new("kill")
                .args(["-KILL", "--", &format!("-{}", child.id())])
                .stderr(Stdio::null())
                .status();
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let stdout = out_h.join().unwrap_or_default();
    let stderr = err_h.join().unwrap_or_default();
    let fail = |reason: String| Error::Adapter {
        reason,
        stdout: stdout.clone(),
        stderr: stderr.clone(),
    };
    match status {
        None => return Err(fail(format!("timed out after {:.1}s", timeout.as_secs_f64()))),
        Some(s) if !s.success() => return Err(fail(format!("command exited with {s}"))),
        Some(_) => {}
    }
    let out_path = dir.join(EXCHANGE_OUTPUT);
    if !out_path.is_file() {
        return Err(fail(format!("command did not produce {EXCHANGE_OUTPUT}")));
    }
    read_image(&out_path).map_err(|e| fail(e.to_string()))
}

pub fn run_sr(lr: &Image, kernel: &Kernel, scale: usize, adapter: &SrAdapterSpec) -> Result<Image> {
    match adapter {
        SrAdapterSpec::BuiltinBicubic => bicubic_upscale(lr, scale),
        SrAdapterSpec::ExternalProcess {
            command,
            working_dir,
            timeout_s,
        } => {
            if !(*timeout_s > 0.0) {
                return Err(Error::Config("adapter timeout must be positive".into()));
            }
            run_external(lr, kernel, scale, command, working_dir.as_deref(), Duration::from_secs_f64(*timeout_s))
        }
    }
}
