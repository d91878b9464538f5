#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use vnet_core::dsp::wav::write_wav;
use vnet_core::dsp::{AudioClip, SAMPLE_RATE};

pub fn vnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnet"))
        .args(args)
        .output()
        .expect("spawn vnet")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn sine(freq: f64, secs: f64, amp: f64) -> Vec<f64> {
    let n = (secs * SAMPLE_RATE as f64).round() as usize;
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
        .collect()
}

pub fn write_clip(path: &Path, samples: Vec<f64>) {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).unwrap();
    }
    write_wav(path, &AudioClip::new(samples, SAMPLE_RATE).unwrap()).unwrap();
}

/// Tiny f64 training config over `data`, writing into `out`.
pub fn write_config(path: &Path, data: &Path, out: &Path, steps: u64) {
    let text = format!(
        "preset = tiny\ndata.root = {}\ntrain.out_dir = {}\ntrain.steps = {steps}\ntrain.precision = f64\n",
        data.display(),
        out.display()
    );
    std::fs::write(path, text).unwrap();
}

/// A directory holding two short tonal clips.
pub fn tonal_dataset(dir: &Path) {
    write_clip(&dir.join("a.wav"), sine(220.0, 0.5, 0.4));
    write_clip(&dir.join("b.wav"), sine(330.0, 0.5, 0.3));
}
