//! Shared fixtures: a hand-built bright-square detector and a seeded
//! synthetic localization suite written to disk as PGM files plus a manifest.
#![allow(dead_code)]

pub mod oracle;
pub mod random;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stnet::model_io::{save_weights, write_pnm, NetworkConfig, PnmImage};
use stnet::net::{Conv, Dense, LayerOp, LayerSpec, Network};
use stnet::tensor::{Shape3, Window};

pub const SIDE: usize = 64;
pub const CLASSES: [&str; 2] = ["background", "square"];
pub const SQUARE: usize = 1;

/// input 1x64x64
/// conv1 1x1: channel 0 is the pixel ("bright"), channel 1 is `1 - pixel` ("dark")
/// relu1, pool1 2x2/2 -> 2x32x32
/// conv2 32x32: channel 0 sums bright evidence, channel 1 averages dark evidence
/// flatten, fc swaps the two into (background, square), softmax
pub fn detector_net() -> Network {
    let conv1 = Conv::new(Window::new(1, 1, 0), 1, 2, vec![1.0, -1.0], vec![0.0, 1.0]).unwrap();

    let cells = 32 * 32;
    let mut w2 = vec![1.0 / 16.0; cells];
    w2.extend(vec![0.0; cells]);
    w2.extend(vec![0.0; cells]);
    w2.extend(vec![1.0 / cells as f32; cells]);
    let conv2 = Conv::new(Window::new(32, 1, 0), 2, 2, w2, vec![0.0, 0.0]).unwrap();

    let fc = Dense::new(2, 2, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0]).unwrap();
    Network::new(
        Shape3::new(1, SIDE, SIDE),
        vec![
            LayerSpec::new("conv1", LayerOp::Conv(conv1)),
            LayerSpec::relu("relu1"),
            LayerSpec::max_pool("pool1", 2, 2, 0),
            LayerSpec::new("conv2", LayerOp::Conv(conv2)),
            LayerSpec::flatten("flatten"),
            LayerSpec::new("fc", LayerOp::Fc(fc)),
            LayerSpec::softmax("prob"),
        ],
    )
    .unwrap()
}

/// Writes `net.json` and `net.stnt` into `dir`.
pub fn write_detector(dir: &Path) -> (PathBuf, PathBuf) {
    let classes = CLASSES.iter().map(|c| c.to_string()).collect();
    let (config, table) = NetworkConfig::from_network(&detector_net(), classes).unwrap();
    let net = dir.join("net.json");
    let weights = dir.join("net.stnt");
    std::fs::write(&net, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    save_weights(&weights, &table).unwrap();
    (net, weights)
}

/// Inclusive `[x0, y0, x1, y1]`.
pub type Rect = [usize; 4];

fn fill(pixels: &mut [u8], r: Rect, value: u8) {
    for y in r[1]..=r[3] {
        for x in r[0]..=r[2] {
            pixels[y * SIDE + x] = value;
        }
    }
}

/// Black image with the top-left quadrant white.
pub fn quadrant_image() -> (PnmImage, Rect) {
    let mut pixels = vec![0u8; SIDE * SIDE];
    let quad = [0, 0, SIDE / 2 - 1, SIDE / 2 - 1];
    fill(&mut pixels, quad, 255);
    (PnmImage::gray(SIDE, SIDE, pixels).unwrap(), quad)
}

fn overlaps_with_margin(a: Rect, b: Rect, margin: usize) -> bool {
    a[0] <= b[2] + margin && b[0] <= a[2] + margin && a[1] <= b[3] + margin && b[1] <= a[3] + margin
}

/// One suite image: dim noise, a white square (side 10..=24) and one to three
/// white 3x3 or 4x4 specks kept at least 6 px away from it.
pub fn suite_image(rng: &mut ChaCha8Rng) -> (PnmImage, Rect) {
    let mut pixels: Vec<u8> = (0..SIDE * SIDE).map(|_| rng.gen_range(0..=60)).collect();
    let s = rng.gen_range(10..=24);
    let x0 = rng.gen_range(0..=SIDE - s);
    let y0 = rng.gen_range(0..=SIDE - s);
    let square = [x0, y0, x0 + s - 1, y0 + s - 1];
    fill(&mut pixels, square, 255);

    let specks = rng.gen_range(1..=3);
    let mut placed: Vec<Rect> = Vec::new();
    while placed.len() < specks {
        let k = rng.gen_range(3..=4);
        let x = rng.gen_range(0..=SIDE - k);
        let y = rng.gen_range(0..=SIDE - k);
        let r = [x, y, x + k - 1, y + k - 1];
        if overlaps_with_margin(r, square, 6)
            || placed.iter().any(|p| overlaps_with_margin(r, *p, 1))
        {
            continue;
        }
        fill(&mut pixels, r, 255);
        placed.push(r);
    }
    (PnmImage::gray(SIDE, SIDE, pixels).unwrap(), square)
}

/// Writes `n` suite images and `manifest.jsonl` into `dir`; returns the
/// manifest path.
pub fn write_suite(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::new();
    for i in 0..n {
        let (image, square) = suite_image(&mut rng);
        let name = format!("img{i:03}.pgm");
        write_pnm(&dir.join(&name), &image).unwrap();
        let line = serde_json::json!({"path": name, "label_index": SQUARE, "boxes": [square]});
        manifest.push_str(&line.to_string());
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Parses an `eval` command line against the given files, as the binary would.
pub fn eval_args(
    net: &Path,
    weights: &Path,
    manifest: &Path,
    extra: &[&str],
) -> (stnet::cli::ModelArgs, PathBuf, stnet::cli::SelectionArgs) {
    use clap::Parser;
    let mut args: Vec<String> = ["stnet", "eval", "--net"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.push(net.display().to_string());
    args.push("--weights".into());
    args.push(weights.display().to_string());
    args.push("--manifest".into());
    args.push(manifest.display().to_string());
    args.extend(extra.iter().map(|s| s.to_string()));
    match stnet::cli::Cli::try_parse_from(args).unwrap().command {
        stnet::cli::Command::Eval {
            model,
            manifest,
            selection,
        } => (model, manifest, selection),
        _ => unreachable!(),
    }
}
