use cfpnet_core::error::{CheckpointError, Error, PixmapError};
use cfpnet_core::io::{
    colorize, decode_checkpoint, decode_ppm, encode_checkpoint, encode_ppm, image_to_tensor, load_checkpoint,
    save_checkpoint, RgbImage, CHECKPOINT_MAGIC,
};
use cfpnet_core::ops::Mode;
use cfpnet_core::params::ParamKind;
use cfpnet_core::tape::Tape;
use cfpnet_core::{Network32, Tensor32, VariantSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A toy net whose BN buffers and input mean differ from their initial values.
fn trained_like(seed: u64) -> Network32 {
    let mut net = Network32::new(VariantSpec::toy(3), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor32::random_normal([2, 3, 16, 16], 0.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(image);
    let (_, record) = net.forward(&mut tape, &x, Mode::Train).unwrap();
    let updates = record.bn_updates;
    drop(tape);
    net.apply_bn_updates(&updates);
    net.set_input_mean([0.41, 0.52, 0.33]);
    net
}

fn u32_at(bytes: &[u8], pos: usize) -> usize {
    u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize
}

/// Offset of the tensor count field.
fn count_offset(bytes: &[u8]) -> usize {
    12 + u32_at(bytes, 8)
}

#[test]
fn round_trip_is_bitwise_and_forward_equal() {
    let net = trained_like(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.cfpn");
    save_checkpoint(&net, &path).unwrap();
    let back: Network32 = load_checkpoint(&path).unwrap();
    assert_eq!(back.spec(), net.spec());
    for ((_, a), (_, b)) in net.store().iter().zip(back.store().iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor32| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.value()), bits(b.value()), "{}", a.name);
    }
    let image = Tensor32::random_uniform([1, 3, 32, 32], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
    let x = net.normalize(&image).unwrap();
    let y0 = net.infer(&x).unwrap();
    let y1 = back.infer(&back.normalize(&image).unwrap()).unwrap();
    assert_eq!(
        y0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        y1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
}

#[test]
fn running_statistics_survive() {
    let net = trained_like(2);
    let back: Network32 = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
    let id = net.store().iter().find(|(_, e)| e.kind == ParamKind::BnRunningVar).unwrap().0;
    assert_ne!(net.store().get(id).data()[0], 1.0);
    assert_eq!(net.store().get(id), back.store().get(id));
    assert_eq!(back.input_mean(), net.input_mean());
}

#[test]
fn layout_is_little_endian() {
    let bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    assert_eq!(&bytes[..4], &CHECKPOINT_MAGIC);
    assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
    let desc_len = u32_at(&bytes, 8);
    let desc = std::str::from_utf8(&bytes[12..12 + desc_len]).unwrap();
    assert!(desc.starts_with("name=toy;"));
    let first = count_offset(&bytes) + 4;
    let name_len = u32_at(&bytes, first);
    assert_eq!(&bytes[first + 4..first + 4 + name_len], b"stem.1.weight");
    // rank 4, extents 16×3×3×3
    let r = first + 4 + name_len;
    assert_eq!((0..5).map(|i| u32_at(&bytes, r + 4 * i)).collect::<Vec<_>>(), [4, 16, 3, 3, 3]);
}

#[test]
fn corrupt_magic() {
    let mut bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    bytes[0] = b'X';
    let err = decode_checkpoint::<f32>(&bytes).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(CheckpointError::BadMagic { found }) if &found == b"XFPN"));
    assert!(err.to_string().contains("bad magic"));
}

#[test]
fn unknown_version_is_rejected() {
    let mut bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    bytes[4] = 2;
    assert!(matches!(
        decode_checkpoint::<f32>(&bytes),
        Err(Error::Checkpoint(CheckpointError::UnsupportedVersion(2)))
    ));
}

#[test]
fn count_mismatch_names_the_index() {
    let bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    let at = count_offset(&bytes);
    let count = u32_at(&bytes, at);
    let mut more = bytes.clone();
    more[at..at + 4].copy_from_slice(&((count + 1) as u32).to_le_bytes());
    match decode_checkpoint::<f32>(&more) {
        Err(Error::Checkpoint(CheckpointError::Structural { index, .. })) => assert_eq!(index, count),
        other => panic!("{other:?}"),
    }
    let mut fewer = bytes;
    fewer[at..at + 4].copy_from_slice(&((count - 1) as u32).to_le_bytes());
    match decode_checkpoint::<f32>(&fewer) {
        Err(Error::Checkpoint(CheckpointError::Structural { index, detail })) => {
            assert_eq!(index, count - 1);
            assert!(detail.contains(&format!("{}", count - 1)));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn extent_mismatch() {
    let mut bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    let first = count_offset(&bytes) + 4;
    let r = first + 4 + u32_at(&bytes, first);
    bytes[r + 4..r + 8].copy_from_slice(&17u32.to_le_bytes());
    match decode_checkpoint::<f32>(&bytes) {
        Err(Error::Checkpoint(CheckpointError::ExtentMismatch { name, expected, found })) => {
            assert_eq!(name, "stem.1.weight");
            assert_eq!(expected, [16, 3, 3, 3]);
            assert_eq!(found, [17, 3, 3, 3]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn descriptor_mismatch_is_a_variant_error() {
    let bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    let text = String::from_utf8_lossy(&bytes[12..12 + u32_at(&bytes, 8)]).replace("classes=3", "classes=x");
    let mut patched = bytes[..8].to_vec();
    patched.extend_from_slice(&(text.len() as u32).to_le_bytes());
    patched.extend_from_slice(text.as_bytes());
    patched.extend_from_slice(&bytes[12 + u32_at(&bytes, 8)..]);
    assert!(matches!(
        decode_checkpoint::<f32>(&patched),
        Err(Error::Checkpoint(CheckpointError::Variant(_)))
    ));
}

#[test]
fn trailing_bytes_are_structural() {
    let mut bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    bytes.push(0);
    assert!(matches!(
        decode_checkpoint::<f32>(&bytes),
        Err(Error::Checkpoint(CheckpointError::Structural { .. }))
    ));
}

#[test]
fn failed_save_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("net.cfpn");
    let net = Network32::new(VariantSpec::toy(3), 0).unwrap();
    assert!(matches!(save_checkpoint(&net, &path), Err(Error::Io { .. })));
    assert!(!path.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn pixmap_tensor_bridge() {
    let img = RgbImage {
        width: 2,
        height: 1,
        data: vec![0, 51, 255, 255, 0, 102],
    };
    let back = decode_ppm(&encode_ppm(&img)).unwrap();
    assert_eq!(back, img);
    let t: Tensor32 = image_to_tensor(&back);
    assert_eq!(t.shape(), [1, 3, 1, 2]);
    assert_eq!(t.at(0, 0, 0, 0), 0.0);
    assert_eq!(t.at(0, 2, 0, 0), 1.0);
    assert_eq!(t.at(0, 1, 0, 1), 0.0);
    assert!(matches!(decode_ppm(b"P6\n2 1\n255\n\x00"), Err(PixmapError::Truncated { offset: 11, .. })));
}

#[test]
fn palette_is_fixed() {
    let labels = cfpnet_core::LabelMap::new([1, 1, 2], vec![0, 1]).unwrap();
    let a = colorize(&labels);
    assert_eq!(a, colorize(&labels));
    assert_ne!(a.data[..3], a.data[3..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Any single-byte truncation or magic corruption is reported, never a panic.
    #[test]
    fn truncation_is_always_an_error(cut in 0usize..10_000) {
        let bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
        let cut = cut % bytes.len();
        let err = decode_checkpoint::<f32>(&bytes[..cut]).unwrap_err();
        let ok = matches!(
            err,
            Error::Checkpoint(
                CheckpointError::Truncated { .. }
                    | CheckpointError::BadMagic { .. }
                    | CheckpointError::Structural { .. }
            )
        );
        prop_assert!(ok, "{:?}", err);
    }
}

#[test]
fn mid_record_truncation_is_truncated() {
    let bytes = encode_checkpoint(&Network32::new(VariantSpec::toy(3), 0).unwrap());
    let cut = bytes.len() - 3;
    assert!(matches!(
        decode_checkpoint::<f32>(&bytes[..cut]),
        Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
    ));
}
