//! Fixture images and helpers for running the `nfcnn` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nfcnn::image_io::save_image;
use nfcnn_core::Tensor;

/// Smooth, textured gray image with values in `[0, 255]`.
pub fn scene(h: usize, w: usize, variant: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
            let v = match variant % 4 {
                0 => 40.0 + 170.0 * fx,
                1 => {
                    if (x / 6 + y / 6) % 2 == 0 {
                        60.0
                    } else {
                        190.0
                    }
                }
                2 => 128.0 + 90.0 * (6.0 * fx + 3.0 * fy).sin(),
                _ => {
                    if (fx - 0.5).powi(2) + (fy - 0.5).powi(2) < 0.09 {
                        210.0
                    } else {
                        50.0 + 60.0 * fy
                    }
                }
            };
            data.push(v.round());
        }
    }
    Tensor::from_vec(&[1, h, w], data).unwrap()
}

/// Writes `count` gray PNG scenes of size `h x w` into `dir`.
pub fn write_dataset(dir: &Path, count: usize, h: usize, w: usize) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..count)
        .map(|i| {
            let p = dir.join(format!("img{i:02}.png"));
            save_image(&scene(h, w, i), &p).unwrap();
            p
        })
        .collect()
}

pub fn nfcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfcnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Short, small training run writing `ckpt` (and `ckpt` with `.log`).
pub fn train_tiny(data: &Path, ckpt: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        path_str(data),
        "--out",
        path_str(ckpt),
        "--sigma",
        "25",
        "--steps",
        "4",
        "--seed",
        "1",
        "--width",
        "2",
        "--patch",
        "12",
        "--batch",
        "2",
    ];
    args.extend_from_slice(extra);
    nfcnn(&args)
}
