//! The `pansharp` command line: simulate, train, fuse, eval-reduced,
//! eval-full and info.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::fusenet::{self, CHECKPOINT_MAGIC};
use crate::metrics::{self, MetricsReport, RESOLUTION_RATIO};
use crate::pipeline::{self, DEFAULT_LEVELS};
use crate::raster::{self, Dtype, MbrHeader, RasterImage, MBR_MAGIC};
use crate::training::{self, wald_degrade, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "pansharp", version, about = "Pyramid-based deep pansharpening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleType {
    U16,
    F32,
}

impl From<SampleType> for Dtype {
    fn from(s: SampleType) -> Self {
        match s {
            SampleType::U16 => Dtype::U16,
            SampleType::F32 => Dtype::F32,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degrade a pan/multispectral pair by 4 and write pan_lr, ms_lr and gt.
    Simulate {
        #[arg(long)]
        pan: PathBuf,
        #[arg(long)]
        ms: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a network from a configuration file and a list of image pairs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Text file with one `<pan> <ms>` pair per line, relative to the list.
        #[arg(long)]
        data_list: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        loss_log: PathBuf,
    },
    /// Fuse a pan image with a multispectral image.
    Fuse {
        #[arg(long)]
        pan: PathBuf,
        #[arg(long)]
        ms: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pyramid levels; the pan image is 2^levels times the multispectral one.
        #[arg(long, default_value_t = DEFAULT_LEVELS)]
        levels: usize,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: SampleType,
        /// Write an 8-bit PPM rendering of three bands.
        #[arg(long)]
        preview: Option<PathBuf>,
        /// Zero-based preview bands as `r,g,b`.
        #[arg(long, default_value = "0,1,2")]
        bands: String,
    },
    /// Reference-based metrics (QAVE, SAM, ERGAS, SCC).
    EvalReduced {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
    },
    /// No-reference metrics (D_lambda, D_s, QNR).
    EvalFull {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        ms: PathBuf,
        #[arg(long)]
        pan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
    },
    /// Print the header of an MBR image or FNET checkpoint.
    Info {
        #[arg(long)]
        file: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match run(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "--{flag}: no such file {}",
            path.display()
        )))
    }
}

fn require_parent(flag: &str, path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::Usage(format!(
            "--{flag}: directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_bands(s: &str) -> Result<(usize, usize, usize)> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("--bands: expected r,g,b indices, got {s:?}")))?;
    match v[..] {
        [r, g, b] => Ok((r, g, b)),
        _ => Err(Error::Usage(format!(
            "--bands: expected three indices, got {s:?}"
        ))),
    }
}

/// Crops `high` and `low` to the largest sizes with `high == factor * low`
/// and `high` divisible by `divisor`.
fn crop_to_ratio(
    high: &RasterImage,
    low: &RasterImage,
    factor: usize,
    divisor: usize,
    err: &mut dyn Write,
) -> Result<(RasterImage, RasterImage)> {
    // low must be a multiple of divisor / factor (at least 1)
    let step = (divisor / factor).max(1);
    let fit = |h: usize, l: usize| (l.min(h / factor) / step) * step;
    let (lw, lh) = (
        fit(high.width(), low.width()),
        fit(high.height(), low.height()),
    );
    if lw == 0 || lh == 0 {
        return Err(Error::Dimension(format!(
            "{}x{} and {}x{} have no common region at ratio {factor}",
            high.width(),
            high.height(),
            low.width(),
            low.height()
        )));
    }
    let (hw, hh) = (lw * factor, lh * factor);
    if (hw, hh) != (high.width(), high.height()) || (lw, lh) != (low.width(), low.height()) {
        let _ = writeln!(
            err,
            "note: cropping to {hw}x{hh} / {lw}x{lh} (from {}x{} / {}x{})",
            high.width(),
            high.height(),
            low.width(),
            low.height()
        );
    }
    Ok((high.crop(0, 0, hw, hh)?, low.crop(0, 0, lw, lh)?))
}

fn emit_report(
    report: &MetricsReport,
    format: ReportFormat,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Markdown => report.to_markdown("fused"),
    };
    write_file(path, text.as_bytes())?;
    let _ = write!(out, "{text}");
    Ok(())
}

/// Reads a data list: one `<pan> <ms>` pair per line, `#` comments, paths
/// relative to the list's directory.
pub fn read_data_list(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let [pan, ms] = parts[..] else {
            return Err(Error::Usage(format!(
                "--data-list line {}: expected `<pan> <ms>`",
                n + 1
            )));
        };
        pairs.push((base.join(pan), base.join(ms)));
    }
    if pairs.is_empty() {
        return Err(Error::Usage("--data-list names no image pairs".into()));
    }
    Ok(pairs)
}

fn info(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = &bytes[..bytes.len().min(4)];
    if magic == MBR_MAGIC {
        let h = MbrHeader::parse(&bytes)?;
        raster::decode_mbr(&bytes)?;
        Ok(format!(
            "{}x{}, {} bands, {}, max {}",
            h.width, h.height, h.bands, h.dtype, h.radiometric_max
        ))
    } else if magic == CHECKPOINT_MAGIC {
        let p = fusenet::decode_checkpoint(&bytes)?;
        Ok(format!(
            "FuseNet checkpoint, B={}, K={}, {} parameters",
            p.bands(),
            p.blocks(),
            p.param_count()
        ))
    } else {
        Err(Error::Format(format!(
            "unknown magic {:?} (bytes {:02x?})",
            String::from_utf8_lossy(magic),
            magic
        )))
    }
}

fn run(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Simulate { pan, ms, out_dir } => {
            require_file("pan", &pan)?;
            require_file("ms", &ms)?;
            if !out_dir.is_dir() {
                return Err(Error::Usage(format!(
                    "--out-dir: directory {} does not exist",
                    out_dir.display()
                )));
            }
            let (pan, ms) = (raster::load_mbr(&pan)?, raster::load_mbr(&ms)?);
            if pan.width() != RESOLUTION_RATIO * ms.width()
                || pan.height() != RESOLUTION_RATIO * ms.height()
            {
                return Err(Error::Usage(format!(
                    "pan {}x{} must be exactly {RESOLUTION_RATIO}x the multispectral {}x{}",
                    pan.width(),
                    pan.height(),
                    ms.width(),
                    ms.height()
                )));
            }
            let outputs = [
                ("pan_lr.mbr", wald_degrade(&pan, RESOLUTION_RATIO)?),
                ("ms_lr.mbr", wald_degrade(&ms, RESOLUTION_RATIO)?),
                ("gt.mbr", ms),
            ];
            for (name, img) in &outputs {
                let path = out_dir.join(name);
                raster::save_mbr(img, &path, Dtype::F32)?;
                let _ = writeln!(
                    out,
                    "{} {}x{}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    img.bands()
                );
            }
            Ok(())
        }
        Command::Train {
            config,
            data_list,
            out_checkpoint,
            loss_log,
        } => {
            require_file("config", &config)?;
            require_file("data-list", &data_list)?;
            require_parent("out-checkpoint", &out_checkpoint)?;
            require_parent("loss-log", &loss_log)?;
            let cfg = TrainConfig::load(&config)?;
            let pairs = read_data_list(&data_list)?;
            for (pan, ms) in &pairs {
                require_file("data-list", pan)?;
                require_file("data-list", ms)?;
            }
            let outcome = training::train(&pairs, &cfg, &out_checkpoint, &loss_log)?;
            match outcome.losses.last() {
                Some(l) => {
                    let _ = writeln!(out, "{} iterations, final loss {l}", outcome.losses.len());
                }
                None => {
                    let _ = writeln!(out, "0 iterations, wrote initial weights");
                }
            }
            Ok(())
        }
        Command::Fuse {
            pan,
            ms,
            checkpoint,
            out: out_path,
            levels,
            dtype,
            preview,
            bands,
        } => {
            require_file("pan", &pan)?;
            require_file("ms", &ms)?;
            require_file("checkpoint", &checkpoint)?;
            require_parent("out", &out_path)?;
            if let Some(p) = &preview {
                require_parent("preview", p)?;
            }
            if levels == 0 || levels > 8 {
                return Err(Error::Usage(format!(
                    "--levels must be in 1..=8, got {levels}"
                )));
            }
            let triple = parse_bands(&bands)?;
            let params = fusenet::load_checkpoint(&checkpoint)?;
            let (pan, ms) = (raster::load_mbr(&pan)?, raster::load_mbr(&ms)?);
            if params.bands() != ms.bands() {
                return Err(Error::Format(format!(
                    "checkpoint expects {} bands, multispectral image has {}",
                    params.bands(),
                    ms.bands()
                )));
            }
            let f = 1 << levels;
            let (pan, ms) = crop_to_ratio(&pan, &ms, f, f, err)?;
            if preview.is_some() {
                for idx in [triple.0, triple.1, triple.2] {
                    if idx >= ms.bands() {
                        return Err(Error::Index(format!(
                            "preview band {idx} out of range for {}-band image",
                            ms.bands()
                        )));
                    }
                }
            }
            let fused = pipeline::fuse(&pan, &ms, &params, levels)?.into_final();
            if !fused.data().iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(
                    "fused image contains non-finite samples".into(),
                ));
            }
            raster::save_mbr(&fused, &out_path, dtype.into())?;
            if let Some(p) = &preview {
                write_file(p, &raster::export_ppm(&fused, triple)?)?;
            }
            let _ = writeln!(
                out,
                "{} {}x{}x{}",
                out_path.display(),
                fused.width(),
                fused.height(),
                fused.bands()
            );
            Ok(())
        }
        Command::EvalReduced {
            fused,
            gt,
            out: out_path,
            format,
        } => {
            require_file("fused", &fused)?;
            require_file("gt", &gt)?;
            require_parent("out", &out_path)?;
            let (fused, gt) = (raster::load_mbr(&fused)?, raster::load_mbr(&gt)?);
            let report = metrics::evaluate_reduced(&fused, &gt)?;
            emit_report(&report, format, &out_path, out)
        }
        Command::EvalFull {
            fused,
            ms,
            pan,
            out: out_path,
            format,
        } => {
            require_file("fused", &fused)?;
            require_file("ms", &ms)?;
            require_file("pan", &pan)?;
            require_parent("out", &out_path)?;
            let fused = raster::load_mbr(&fused)?;
            let ms = raster::load_mbr(&ms)?;
            let pan = raster::load_mbr(&pan)?;
            if fused.width() != pan.width() || fused.height() != pan.height() {
                return Err(Error::Shape(format!(
                    "fused {}x{} and pan {}x{} differ",
                    fused.width(),
                    fused.height(),
                    pan.width(),
                    pan.height()
                )));
            }
            let (fused_c, ms) =
                crop_to_ratio(&fused, &ms, RESOLUTION_RATIO, RESOLUTION_RATIO, err)?;
            let pan = pan.crop(0, 0, fused_c.width(), fused_c.height())?;
            let report = metrics::evaluate_full(&fused_c, &ms, &pan)?;
            emit_report(&report, format, &out_path, out)
        }
        Command::Info { file } => {
            require_file("file", &file)?;
            let line = info(&file)?;
            let _ = writeln!(out, "{line}");
            Ok(())
        }
    }
}
