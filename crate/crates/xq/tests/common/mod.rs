#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

pub fn xq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xq")).args(args).env("XQ_LOG", "error").output().expect("run xq")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn ok(args: &[&str]) -> String {
    let out = xq(args);
    assert!(out.status.success(), "xq {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

pub fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
}

pub fn gradient(side: u32) -> RgbImage {
    let scale = 255.0 / (side - 1) as f64;
    RgbImage::from_fn(side, side, |x, y| {
        let r = x as f64 * scale;
        let g = y as f64 * scale;
        let b = (x + y) as f64 * scale / 2.0;
        Rgb([r.round() as u8, g.round() as u8, b.round() as u8])
    })
}

pub fn save_png(img: &RgbImage, path: &Path) {
    img.save(path).unwrap();
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
