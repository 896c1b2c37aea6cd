//! Command-line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attention::{LayerTrace, SelectionConfig};
use crate::chviz::{ch_accumulate, gaussian_smooth, overlay, render, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::localize::{
    evaluate, load_dataset, localize, AttentionMap, BBox, LocalizationReport, ThresholdMode,
};
use crate::model_io::{load_config, load_weights, read_image, read_pnm, write_pnm, PnmImage};
use crate::net::Network;
use crate::tensor::FeatureVolume;

#[derive(Debug, Parser)]
#[command(
    name = "stnet",
    version,
    about = "Selective-tuning attention for CNN localization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the top-5 classes of an image as JSON.
    Classify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        image: PathBuf,
    },
    /// Localize one class in an image and print the box as JSON.
    Localize {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        image: PathBuf,
        /// Class to attend to; defaults to the top prediction.
        #[arg(long)]
        class: Option<usize>,
        #[command(flatten)]
        selection: SelectionArgs,
        /// Write the attention map as PGM.
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Render a class-hypothesis map.
    Chmap {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        class: Option<usize>,
        #[command(flatten)]
        selection: SelectionArgs,
        /// Gaussian smoothing width in pixels.
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        /// Grayscale PGM output.
        #[arg(long)]
        out: PathBuf,
        /// Heat overlay PPM on top of the input image.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        opacity: f64,
    },
    /// Evaluate localization over a JSONL manifest using ground-truth labels.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Network config JSON.
    #[arg(long)]
    pub net: PathBuf,
    /// STNT weights.
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThresholdArg {
    MeanAll,
    MeanNonzero,
}

impl From<ThresholdArg> for ThresholdMode {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::MeanAll => ThresholdMode::MeanAll,
            ThresholdArg::MeanNonzero => ThresholdMode::MeanNonzero,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectionArgs {
    /// Layer the top-down pass stops at (`input` for the image itself).
    #[arg(long, default_value = "pool1")]
    pub stop_layer: String,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sc_alpha: f64,
    #[arg(long, default_value_t = 3)]
    pub offset_fc: usize,
    /// SI offset for bridge pruning, or `none` to skip it.
    #[arg(long, default_value = "3")]
    pub offset_bridge: String,
    #[arg(long, value_enum, default_value_t = ThresholdArg::MeanAll)]
    pub threshold: ThresholdArg,
    /// Keep all stage-1 winners at spatial layers and only the strongest at fc layers.
    #[arg(long)]
    pub no_stage2: bool,
    /// Write per-layer selection statistics as JSON.
    #[arg(long)]
    pub debug_trace: Option<PathBuf>,
}

impl SelectionArgs {
    pub fn config(&self) -> Result<SelectionConfig> {
        let offset_bridge = match self.offset_bridge.as_str() {
            "none" => None,
            s => Some(s.parse().map_err(|_| {
                Error::Config(format!(
                    "--offset-bridge expects an integer or `none`, got `{s}`"
                ))
            })?),
        };
        let cfg = SelectionConfig {
            epsilon: self.epsilon,
            offset_fc: self.offset_fc,
            offset_bridge,
            sc_alpha: self.sc_alpha,
            stage2: !self.no_stage2,
            stop_layer: self.stop_layer.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_model(args: &ModelArgs) -> Result<(Network, Vec<String>)> {
    let config = load_config(&args.net)?;
    let net = config.build(&load_weights(&args.weights)?)?;
    Ok((net, config.classes))
}

fn check_image(net: &Network, image: &FeatureVolume, path: &Path) -> Result<()> {
    if image.shape() != net.input_shape() {
        let (a, b) = (image.shape(), net.input_shape());
        return Err(Error::Shape(format!(
            "{}: image is {}x{}x{}, network expects {}x{}x{}",
            path.display(),
            a.channels,
            a.height,
            a.width,
            b.channels,
            b.height,
            b.width
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Ranked {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub score: f32,
}

/// Top-5 classes, highest score first; ties keep the lower index first.
pub fn top_classes(
    net: &Network,
    image: &FeatureVolume,
    classes: &[String],
) -> Result<Vec<Ranked>> {
    let trace = net.forward(image)?;
    let scores = trace.output().data();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    Ok(order
        .into_iter()
        .take(5)
        .map(|i| Ranked {
            index: i,
            name: classes.get(i).cloned(),
            score: scores[i],
        })
        .collect())
}

fn resolve_class(net: &Network, image: &FeatureVolume, class: Option<usize>) -> Result<usize> {
    match class {
        Some(k) if k < net.num_classes() => Ok(k),
        Some(k) => Err(Error::BadClass {
            index: k,
            classes: net.num_classes(),
        }),
        None => Ok(top_classes(net, image, &[])?[0].index),
    }
}

fn write_trace(path: &Path, layers: &[LayerTrace]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(layers)?)?;
    Ok(())
}

fn map_to_pgm(map: &AttentionMap) -> PnmImage {
    let max = map.values.iter().copied().fold(0.0, f64::max);
    let pixels = map
        .values
        .iter()
        .map(|v| {
            if max > 0.0 {
                (v / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    PnmImage::gray(map.width, map.height, pixels).expect("map dims are consistent")
}

#[derive(Debug, Serialize)]
pub struct LocalizeOutput {
    pub class: usize,
    pub bbox: BBox,
    pub rf_size: usize,
    pub attended_cells: usize,
    pub active_fraction: f64,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn cmd_classify(model: &ModelArgs, image: &Path) -> Result<Vec<Ranked>> {
    let (net, classes) = load_model(model)?;
    let volume = read_image(image)?;
    check_image(&net, &volume, image)?;
    top_classes(&net, &volume, &classes)
}

pub fn cmd_localize(
    model: &ModelArgs,
    image: &Path,
    class: Option<usize>,
    selection: &SelectionArgs,
    map_out: Option<&Path>,
) -> Result<LocalizeOutput> {
    let cfg = selection.config()?;
    let (net, _) = load_model(model)?;
    let volume = read_image(image)?;
    check_image(&net, &volume, image)?;
    let class = resolve_class(&net, &volume, class)?;
    let loc = localize(&net, &volume, class, &cfg, selection.threshold.into())?;
    if let Some(path) = &selection.debug_trace {
        write_trace(path, &loc.td.layers)?;
    }
    if let Some(path) = map_out {
        write_pnm(path, &map_to_pgm(&loc.map))?;
    }
    Ok(LocalizeOutput {
        class,
        bbox: loc.bbox,
        rf_size: loc.geometry.rf_size,
        attended_cells: loc.thresholded.nonzero_count(),
        active_fraction: loc.td.active_fraction(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_chmap(
    model: &ModelArgs,
    image: &Path,
    class: Option<usize>,
    selection: &SelectionArgs,
    sigma: f64,
    out: &Path,
    overlay_out: Option<&Path>,
    opacity: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::Config(format!("opacity {opacity} outside [0, 1]")));
    }
    let cfg = selection.config()?;
    let (net, _) = load_model(model)?;
    let volume = read_image(image)?;
    check_image(&net, &volume, image)?;
    let class = resolve_class(&net, &volume, class)?;
    let loc = localize(&net, &volume, class, &cfg, selection.threshold.into())?;
    if let Some(path) = &selection.debug_trace {
        write_trace(path, &loc.td.layers)?;
    }
    let dims = (volume.height(), volume.width());
    let map = gaussian_smooth(&ch_accumulate(&loc.points, &loc.geometry, dims), sigma)?;
    render(&map, out)?;
    if let Some(path) = overlay_out {
        write_pnm(path, &overlay(&map, &read_pnm(image)?, opacity)?)?;
    }
    Ok(())
}

pub fn cmd_eval(
    model: &ModelArgs,
    manifest: &Path,
    selection: &SelectionArgs,
) -> Result<LocalizationReport> {
    let cfg = selection.config()?;
    let (net, _) = load_model(model)?;
    let dataset = load_dataset(manifest)?;
    for s in &dataset {
        check_image(&net, &s.image, Path::new(&s.name))?;
    }
    evaluate(&dataset, &net, &cfg, selection.threshold.into())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Classify { model, image } => print_json(&cmd_classify(&model, &image)?),
        Command::Localize {
            model,
            image,
            class,
            selection,
            map_out,
        } => print_json(&cmd_localize(
            &model,
            &image,
            class,
            &selection,
            map_out.as_deref(),
        )?),
        Command::Chmap {
            model,
            image,
            class,
            selection,
            sigma,
            out,
            overlay,
            opacity,
        } => cmd_chmap(
            &model,
            &image,
            class,
            &selection,
            sigma,
            &out,
            overlay.as_deref(),
            opacity,
        ),
        Command::Eval {
            model,
            manifest,
            selection,
        } => {
            let report = cmd_eval(&model, &manifest, &selection)?;
            eprint!("{}", report.to_table());
            print_json(&report)
        }
    }
}

/// Parses `args` and runs the command. Returns 0 on success, 1 for usage or
/// config errors and 2 when the pipeline itself fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
