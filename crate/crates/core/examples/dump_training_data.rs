use chanest::channel::{ObsMode, SystemConfig};
use chanest::harness::{generate_splits, TrainingData};
use std::io::Write;

fn dump(path: &str, data: &[f32]) {
    let mut f = std::fs::File::create(path).unwrap();
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    f.write_all(&bytes).unwrap();
}

fn main() {
    let mut cfg = SystemConfig::desk();
    cfg.snr_db = vec![20.0];
    cfg.master_seed = 1;
    let (train_ds, val_ds, _) = generate_splits(&cfg, ObsMode::FullArray, 20_000).unwrap();
    let norm = TrainingData::fit_normalizer(&train_ds, &[0]).unwrap();
    let tr = TrainingData::assemble(&train_ds, &[0], &norm).unwrap();
    let va = TrainingData::assemble(&val_ds, &[0], &norm).unwrap();
    dump("/tmp/parity/train_x.f32", &tr.features);
    dump("/tmp/parity/train_y.f32", &tr.targets);
    dump("/tmp/parity/val_x.f32", &va.features);
    dump("/tmp/parity/val_y.f32", &va.targets);
    println!("rows {} feat {} tgt {}", tr.rows, tr.feature_width, tr.target_width);
}
