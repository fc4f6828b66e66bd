use std::fs;

use iadg_core::backbone::BackboneConfig;
use iadg_core::dkg::KernelMode;
use iadg_core::synthdata::{probe_dataset, read_dataset, write_dataset, Dataset, DomainSpec, DATASET_MAGIC};
use iadg_core::trainer::{load_checkpoint, save_checkpoint, TrainConfig, Trainer, CHECKPOINT_MAGIC};
use iadg_core::Error;

fn small_dataset() -> Dataset {
    Dataset::generate(&DomainSpec::defaults(3), 3, 16, 17).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        bank_size: 4,
        model: BackboneConfig {
            image_size: 16,
            channels: vec![3, 4, 8, 8],
            kernel_mode: KernelMode::Both,
        },
        ..Default::default()
    }
}

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.iadg");
    let ds = small_dataset();
    write_dataset(&path, &ds).unwrap();
    assert_eq!(&fs::read(&path).unwrap()[..4], DATASET_MAGIC);
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.samples.iter().zip(&ds.samples) {
        assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn dataset_header_probe_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.iadg");
    write_dataset(&path, &small_dataset()).unwrap();
    let h = probe_dataset(&path).unwrap();
    assert_eq!((h.size, h.depth_size, h.total), (16, 2, 18));
    assert_eq!(h.per_domain.len(), 3);
    assert!(h.per_domain.values().all(|c| c.real == 3 && c.spoof == 3));
    assert_eq!(h.data_bytes, 18 * (3 * 16 * 16 + 4) * 4);
}

#[test]
fn truncated_or_corrupted_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.iadg");
    write_dataset(&path, &small_dataset()).unwrap();
    let bytes = fs::read(&path).unwrap();
    let cut = dir.path().join("cut.iadg");
    for keep in [0, 3, 8, 40, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&cut, &bytes[..keep]).unwrap();
        assert!(read_dataset(&cut).is_err(), "kept {keep} bytes");
    }
    let mut bad = bytes.clone();
    bad[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
    fs::write(&cut, &bad).unwrap();
    assert!(matches!(read_dataset(&cut), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    fs::write(&cut, &bad).unwrap();
    assert!(matches!(read_dataset(&cut), Err(Error::Version { found: 9, expected: 1 })));
    let mut bad = bytes;
    bad[0] = b'X';
    fs::write(&cut, &bad).unwrap();
    assert!(matches!(read_dataset(&cut), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let ds = small_dataset();
    let (train, _) = ds.split_holdout("D1").unwrap();
    let mut t = Trainer::new(tiny_config()).unwrap();
    t.run_epoch(&train, None).unwrap();
    let ckpt = t.checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(&fs::read(&path).unwrap()[..8], CHECKPOINT_MAGIC);
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    for ((_, a), (_, b)) in back.params.iter().zip(&ckpt.params) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn truncated_or_corrupted_checkpoint_is_rejected() {
    let t = Trainer::new(tiny_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&path, &t.checkpoint()).unwrap();
    let bytes = fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    for keep in [0, 7, 12, 100, bytes.len() - 8, bytes.len() - 1] {
        fs::write(&cut, &bytes[..keep]).unwrap();
        assert!(load_checkpoint(&cut).is_err(), "kept {keep} bytes");
    }
    let mut bad = bytes.clone();
    bad[10..14].copy_from_slice(&(u32::from_le_bytes(bytes[10..14].try_into().unwrap()) + 5).to_le_bytes());
    fs::write(&cut, &bad).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::Format { .. })));
    let mut bad = bytes;
    bad[8] = 2;
    fs::write(&cut, &bad).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::Version { found: 2, expected: 1 })));
}

#[test]
fn checkpoint_from_other_config_is_refused() {
    let t = Trainer::new(tiny_config()).unwrap();
    let other = TrainConfig { lr: 0.5, ..tiny_config() };
    assert!(Trainer::from_checkpoint(t.checkpoint(), Some(other)).is_err());
    let more_epochs = TrainConfig { epochs: 9, ..tiny_config() };
    assert!(Trainer::from_checkpoint(t.checkpoint(), Some(more_epochs)).is_ok());
}
