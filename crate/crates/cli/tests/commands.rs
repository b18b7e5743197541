use std::path::Path;
use std::process::{Command, Output};

use cfpnet_core::io::{decode_pgm, encode_ppm, save_checkpoint, RgbImage};
use cfpnet_core::{Network32, Tensor, VariantSpec};

fn cfpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfpnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_ppm(path: &Path, width: usize, height: usize) {
    let data = (0..width * height * 3).map(|i| (i * 37 % 256) as u8).collect();
    std::fs::write(path, encode_ppm(&RgbImage { width, height, data })).unwrap();
}

#[test]
fn analyze_v3_compares_with_published_size() {
    let o = cfpnet(&["analyze", "--variant", "v3", "--classes", "19"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("published v3: 550000 params"));
    assert!(text.contains("factor-of-2 band: inside"));
    assert!(text.contains("conv weights + biases:          265738"));
    assert!(text.contains("receptive field"));
}

#[test]
fn analyze_v1_lists_three_modules() {
    let text = stdout(&cfpnet(&["analyze", "--variant", "v1"]));
    assert!(text.contains("3 CFP modules"));
    let modules = text.lines().filter(|l| l.starts_with("cfp")).count();
    assert_eq!(modules, 3);
}

#[test]
fn analyze_bogus_variant_fails_with_usage() {
    let o = cfpnet(&["analyze", "--variant", "bogus"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("possible values"));
}

#[test]
fn analyze_custom_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.cfg");
    std::fs::write(&path, "# desk variant\ninit_channels = 8\ncluster1_rates = [2]\ncluster2_rates = 4, 8\nwidths = 16, 32\nclasses = 5\n").unwrap();
    let o = cfpnet(&["analyze", "--config", p(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("variant custom (5 classes, 3 CFP modules)"));

    std::fs::write(&path, "init_channels = 8\nwidths = 16, 32\n").unwrap();
    let o = cfpnet(&["analyze", "--config", p(&path)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing key"));
}

#[test]
fn gradcheck_passes_and_repeats() {
    let a = cfpnet(&["gradcheck", "--seed", "3"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&cfpnet(&["gradcheck", "--seed", "3"])));
    assert!(stdout(&a).contains("CFP module"));
}

#[test]
fn gradcheck_zero_tolerance_fails_naming_ops() {
    let o = cfpnet(&["gradcheck", "--tolerance", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("conv2d"));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn train_toy_zero_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("init.cfpn");
    let o = cfpnet(&["train-toy", "--iters", "0", "--size", "32", "--output", p(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(dir.path().join("init.csv")).unwrap(), "iter,lr,loss\n");
    let fresh = cfpnet_core::io::encode_checkpoint(&{
        let mut net = Network32::new(VariantSpec::toy(3), 1).unwrap();
        let data = cfpnet_core::training::gen_toy_dataset::<f32>(3, cfpnet_cli::TRAIN_COUNT, 32, 1).unwrap();
        net.set_input_mean(cfpnet_core::training::dataset_mean(&data));
        net
    });
    assert_eq!(std::fs::read(&ckpt).unwrap(), fresh);
    assert!(stdout(&o).contains("held-out mIoU"));
}

#[test]
fn train_toy_rejects_indivisible_size_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.cfpn");
    let o = cfpnet(&["train-toy", "--iters", "1", "--size", "30", "--output", p(&ckpt)]);
    assert!(!o.status.success());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

fn zero_classifier_checkpoint(path: &Path) {
    let mut net = Network32::new(VariantSpec::toy(4), 3).unwrap();
    for name in ["classifier.weight", "classifier.bias"] {
        let id = net.store().find(name).unwrap();
        let shape = net.store().get(id).shape();
        net.store_mut().replace(id, Tensor::zeros(shape)).unwrap();
    }
    save_checkpoint(&net, path).unwrap();
}

#[test]
fn zero_classifier_segments_to_class_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, out, color) =
        (dir.path().join("z.cfpn"), dir.path().join("in.ppm"), dir.path().join("out.pgm"), dir.path().join("out.ppm"));
    zero_classifier_checkpoint(&ckpt);
    write_ppm(&img, 40, 24);
    let args = ["infer", "--weights", p(&ckpt), "--input", p(&img), "--output", p(&out), "--color-output", p(&color)];
    let o = cfpnet(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("segmented 40×24"));
    let gray = decode_pgm(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!((gray.width, gray.height), (40, 24));
    assert!(gray.data.iter().all(|&v| v == 0));
    let first = (std::fs::read(&out).unwrap(), std::fs::read(&color).unwrap());
    assert!(cfpnet(&args).status.success());
    assert_eq!(first, (std::fs::read(&out).unwrap(), std::fs::read(&color).unwrap()));
}

#[test]
fn infer_rejects_indivisible_image_before_output() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, out) = (dir.path().join("z.cfpn"), dir.path().join("in.ppm"), dir.path().join("out.pgm"));
    zero_classifier_checkpoint(&ckpt);
    write_ppm(&img, 20, 16);
    let o = cfpnet(&["infer", "--weights", p(&ckpt), "--input", p(&img), "--output", p(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("multiples of 8"));
    assert!(!out.exists());
}

#[test]
fn infer_reports_malformed_pixmap_offset() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, out) = (dir.path().join("z.cfpn"), dir.path().join("in.ppm"), dir.path().join("out.pgm"));
    zero_classifier_checkpoint(&ckpt);
    std::fs::write(&img, b"P6\n8 8\n255\n\x01\x02").unwrap();
    let o = cfpnet(&["infer", "--weights", p(&ckpt), "--input", p(&img), "--output", p(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("at byte 11"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn infer_with_corrupt_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, out) = (dir.path().join("z.cfpn"), dir.path().join("in.ppm"), dir.path().join("out.pgm"));
    std::fs::write(&ckpt, b"NOPE\x01\x00\x00\x00").unwrap();
    write_ppm(&img, 8, 8);
    let o = cfpnet(&["infer", "--weights", p(&ckpt), "--input", p(&img), "--output", p(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bad magic"));
}
