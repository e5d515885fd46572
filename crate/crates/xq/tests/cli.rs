mod common;

use std::fs;

use common::{gradient, ok, s, save_png, stdout, value, xq};
use image::{Rgb, RgbImage};
use xq::format::stream::read_stream;
use xq::samples::{encode_header, encode_samples, header_path};
use xq::{read_codebook, write_codebook};
use xq_core::{hier_decode, hier_encode, Codebook, FeatureGrid, HierarchySpec, Rng, Variant};

fn write_raw(path: &std::path::Path, data: &[f64], dim: usize) {
    fs::write(path, encode_samples(data)).unwrap();
    fs::write(header_path(path), encode_header(data.len() / dim, dim)).unwrap();
}

#[test]
fn fit_two_clusters_reports_noise_variance() {
    let dir = tempfile::tempdir().unwrap();
    let (dim, sigma) = (2, 0.1);
    let mut rng = Rng::new(5);
    let mut data = Vec::new();
    for i in 0..4000 {
        let center = if i % 2 == 0 { [3.0, 3.0] } else { [-3.0, 1.0] };
        for c in center {
            data.push(c + sigma * rng.next_gaussian());
        }
    }
    let input = dir.path().join("two.f32");
    write_raw(&input, &data, dim);
    let out = dir.path().join("cb");
    let report = ok(&["fit", "--input", s(&input), "--codebook-size", "2", "--seed", "3", "--out", s(&out)]);
    let objective: f64 = value(&report, "objective").parse().unwrap();
    let expected = dim as f64 * sigma * sigma;
    assert!((objective - expected).abs() <= 0.05 * expected, "{objective} vs {expected}");
    assert_eq!(value(&report, "train_samples"), "3600");
    assert_eq!(value(&report, "holdout_samples"), "400");
    assert_eq!(value(&report, "utilization"), "1.000000");
    let cb = read_codebook(&fs::read(out.join("branch-0.xqcb")).unwrap()).unwrap();
    assert_eq!((cb.size(), cb.dim()), (2, 2));
}

#[test]
fn fit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("g.png");
    save_png(&gradient(32), &img);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "fit",
            "--input",
            s(&img),
            "--patch",
            "2",
            "--variant",
            "XQ-V-R2-P3",
            "--codebook-size",
            "16",
            "--seed",
            "9",
            "--out",
            s(&out),
        ]);
        (0..3).map(|b| fs::read(out.join(format!("branch-{b}.xqcb"))).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn fit_rejects_codebook_larger_than_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("few.f32");
    write_raw(&input, &[0.0; 20], 2);
    let out = xq(&["fit", "--input", s(&input), "--codebook-size", "16", "--out", s(&dir.path().join("cb"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("16") && err.contains("9 training samples"), "{err}");
    assert!(!dir.path().join("cb").exists());
}

#[test]
fn flat_image_with_matching_codeword_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let img = RgbImage::from_pixel(16, 16, Rgb([100, 100, 100]));
    let png = dir.path().join("gray.png");
    save_png(&img, &png);
    let gray = 100.0 / 127.5 - 1.0;
    let cb = Codebook::from_rows(&[vec![0.0; 48], vec![gray; 48], vec![1.0; 48]]).unwrap();
    let cbdir = dir.path().join("cb");
    fs::create_dir(&cbdir).unwrap();
    fs::write(cbdir.join("branch-0.xqcb"), write_codebook(&cb)).unwrap();

    let stream = dir.path().join("gray.xqcs");
    let report = ok(&[
        "encode",
        "--image",
        s(&png),
        "--variant",
        "XQ-V",
        "--codebooks",
        s(&cbdir),
        "--patch",
        "4",
        "--out",
        s(&stream),
    ]);
    assert_eq!(value(&report, "psnr"), "inf");
    let back = dir.path().join("back.png");
    let report = ok(&[
        "decode",
        "--stream",
        s(&stream),
        "--codebooks",
        s(&cbdir),
        "--patch",
        "4",
        "--out",
        s(&back),
        "--reference",
        s(&png),
    ]);
    assert_eq!(value(&report, "psnr"), "inf");
    assert_eq!(image::open(&back).unwrap().to_rgb8(), img);
}

#[test]
fn cli_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(17);
    let (side, dim) = (8, 6);
    let data: Vec<f64> = (0..side * side * dim).map(|_| rng.next_gaussian() as f32 as f64).collect();
    let input = dir.path().join("feat.f32");
    write_raw(&input, &data, dim);
    let cb = Codebook::new(16, 3, (0..48).map(|_| rng.next_gaussian() as f32 as f64).collect()).unwrap();
    let cbdir = dir.path().join("cb");
    fs::create_dir(&cbdir).unwrap();
    for b in 0..2 {
        fs::write(cbdir.join(format!("branch-{b}.xqcb")), write_codebook(&cb)).unwrap();
    }
    let variant = "XQ-MS-V-R3-P2";
    let stream = dir.path().join("feat.xqcs");
    ok(&[
        "encode",
        "--features",
        s(&input),
        "--variant",
        variant,
        "--codebooks",
        s(&cbdir),
        "--schedule",
        "2,4,8",
        "--out",
        s(&stream),
    ]);
    let out = dir.path().join("feat.out");
    ok(&["decode", "--stream", s(&stream), "--codebooks", s(&cbdir), "--out", s(&out)]);

    let grid = FeatureGrid::new(side, side, dim, data).unwrap();
    let spec = HierarchySpec::new(Variant::parse(variant).unwrap(), dim, side)
        .unwrap()
        .with_schedule(xq_core::ScaleSchedule::new(vec![2, 4, 8]).unwrap())
        .unwrap();
    let books = vec![cb.clone(), cb];
    let outcome = hier_encode(&grid, &spec, &books, false, &mut Rng::new(0)).unwrap();
    let decoded = hier_decode(&outcome.codes, &spec, &books).unwrap();
    assert_eq!(read_stream(&fs::read(&stream).unwrap()).unwrap().codes(), &outcome.codes);
    assert_eq!(fs::read(&out).unwrap(), encode_samples(decoded.data()));
    assert_eq!(fs::read_to_string(header_path(&out)).unwrap(), "count=64\ndim=6\n");
}

#[test]
fn mismatched_codebook_dim_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("g.png");
    save_png(&gradient(16), &png);
    let cbdir = dir.path().join("cb");
    fs::create_dir(&cbdir).unwrap();
    let cb = Codebook::new(4, 5, vec![0.0; 20]).unwrap();
    fs::write(cbdir.join("branch-0.xqcb"), write_codebook(&cb)).unwrap();
    let stream = dir.path().join("g.xqcs");
    let out = xq(&[
        "encode",
        "--image",
        s(&png),
        "--variant",
        "XQ-V",
        "--codebooks",
        s(&cbdir),
        "--patch",
        "4",
        "--out",
        s(&stream),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim 5"));
    assert!(!stream.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn stats_token_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(2);
    let data: Vec<f64> = (0..16 * 16 * 4).map(|_| rng.next_gaussian()).collect();
    let input = dir.path().join("f.f32");
    write_raw(&input, &data, 4);
    let preset = "1,2,3,4,5,6,8,10,13,16";
    let stream = dir.path().join("a.xqcs");
    let csv = dir.path().join("a.csv");

    ok(&["encode", "--features", s(&input), "--variant", "XQ-MS-L-R10", "--schedule", preset, "--out", s(&stream)]);
    let report = ok(&["stats", "--stream", s(&stream), "--dim", "4", "--csv", s(&csv)]);
    assert_eq!(value(&report, "tokens"), "680");
    assert_eq!(value(&report, "bits"), "2720");
    let util: f64 = value(&report, "utilization").parse().unwrap();
    assert!(util > 0.0 && util <= 1.0);
    let rows = fs::read_to_string(&csv).unwrap();
    let total: u64 = rows.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 680);

    ok(&["encode", "--features", s(&input), "--variant", "XQ-MS-L-R10-P2", "--schedule", preset, "--out", s(&stream)]);
    assert_eq!(value(&ok(&["stats", "--stream", s(&stream)]), "tokens"), "1360");

    let truncated = (0..64)
        .find_map(|seed| {
            let seed = seed.to_string();
            let report = ok(&[
                "encode",
                "--features",
                s(&input),
                "--variant",
                "XQ-MS-L-R10",
                "--schedule",
                preset,
                "--training",
                "--dropout-ratio",
                "1",
                "--seed",
                &seed,
                "--out",
                s(&stream),
            ]);
            let n: usize = value(&report, "active_steps").parse().unwrap();
            (n < 10).then_some(n)
        })
        .expect("dropout truncates");
    let expected: usize = [1, 2, 3, 4, 5, 6, 8, 10, 13, 16][..truncated].iter().map(|s| s * s).sum();
    let report = ok(&["stats", "--stream", s(&stream)]);
    assert_eq!(value(&report, "tokens"), expected.to_string());
    assert_eq!(value(&report, "active_steps"), truncated.to_string());
}

#[test]
fn encode_prints_per_step_errors() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("g.png");
    save_png(&gradient(32), &png);
    let stream = dir.path().join("g.xqcs");
    let report = ok(&["encode", "--image", s(&png), "--variant", "XQ-B-R3-P4", "--patch", "4", "--out", s(&stream)]);
    let errs: Vec<f64> = (1..=3).map(|i| value(&report, &format!("step.{i}.sq_error")).parse().unwrap()).collect();
    assert_eq!(errs.len(), 3);
    assert!(value(&report, "psnr").parse::<f64>().is_ok());
    let back = dir.path().join("b.png");
    ok(&["decode", "--stream", s(&stream), "--patch", "4", "--out", s(&back)]);
    assert_eq!(image::open(&back).unwrap().to_rgb8().dimensions(), (32, 32));
}

#[test]
fn ignored_loss_weights_warn() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("g.png");
    save_png(&gradient(16), &png);
    let stream = dir.path().join("g.xqcs");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_xq"))
        .args([
            "encode",
            "--image",
            s(&png),
            "--variant",
            "XQ-L-P6",
            "--patch",
            "4",
            "--loss-weights",
            "recon=1,perceptual=0.5",
            "--out",
            s(&stream),
        ])
        .env("XQ_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("perceptual"));
    let bad = xq(&[
        "encode",
        "--image",
        s(&png),
        "--variant",
        "XQ-L-P6",
        "--patch",
        "4",
        "--loss-weights",
        "bogus=1",
        "--out",
        s(&stream),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(xq(&["stats", "--stream", "x", "--nope"]).status.code(), Some(2));
    assert_eq!(xq(&["encode", "--variant", "XQ-V", "--out", "o"]).status.code(), Some(2));
    assert_eq!(xq(&["stats", "--stream", "/nonexistent/stream.xqcs"]).status.code(), Some(4));
    let help = xq(&["fit", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("--codebook-size"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.xqcs");
    fs::write(&junk, b"XQCX").unwrap();
    let out = xq(&["stats", "--stream", s(&junk)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    let bad_variant = xq(&["encode", "--features", s(&junk), "--variant", "XQ-Q", "--out", "o"]);
    assert_eq!(bad_variant.status.code(), Some(2));
}
