use camanim::anim::{read_gif, write_gif};
use camanim::imageio::{preprocess, read_png, write_png, DecodedImage, Normalization};
use camanim::report::{format_number, format_signed, ybroad_rows};
use camanim::AppError;
use camanim_core::render::{cube_palette, quantize_to_cube, RgbImage};
use camanim_core::road::YbRoadEntry;
use camanim_core::nn::fixture_architecture;
use camanim_core::{Backend, YbRoadSeries};

fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> DecodedImage {
    let data = (0..w * h).map(|i| f(i % w, i / w)).collect();
    DecodedImage { width: w, height: h, channels: 1, data }
}

#[test]
fn mid_gray_standardizes_to_half_a_level() {
    let img = gray(224, 224, |_, _| 128);
    let pre = preprocess(&img, (224, 224), 1, &Normalization::fixture_default()).unwrap();
    let expected: f64 = (128.0 / 255.0 - 0.5) / 0.5;
    assert!((expected - 0.0039).abs() < 1e-4);
    assert!(pre.input.data().iter().all(|v| (v - expected).abs() < 1e-12));
}

#[test]
fn same_size_resize_is_identity() {
    let img = gray(32, 32, |x, y| ((x * 7 + y * 13) % 256) as u8);
    let pre = preprocess(&img, (32, 32), 1, &Normalization { mean: vec![0.0], std: vec![1.0] }).unwrap();
    for (v, &b) in pre.display.data().iter().zip(&img.data) {
        assert_eq!(*v, b as f64 / 255.0);
    }
    assert_eq!(pre.input, pre.display);
}

#[test]
fn channel_conversion() {
    let img = gray(4, 3, |x, _| (x * 60) as u8);
    let rgb = preprocess(&img, (3, 4), 3, &Normalization { mean: vec![0.0], std: vec![1.0] }).unwrap();
    assert_eq!(rgb.input.shape(), [1, 3, 3, 4]);
    assert_eq!(rgb.input.channel(0), rgb.input.channel(2));

    let color = DecodedImage { width: 1, height: 1, channels: 3, data: vec![255, 255, 255] };
    let back = preprocess(&color, (1, 1), 1, &Normalization { mean: vec![0.0], std: vec![1.0] }).unwrap();
    assert!((back.input.data()[0] - 1.0).abs() < 1e-12);

    let two = DecodedImage { width: 1, height: 1, channels: 2, data: vec![0, 0] };
    assert!(matches!(preprocess(&two, (1, 1), 1, &Normalization::fixture_default()), Err(AppError::Channel(_))));
    let bad_norm = Normalization { mean: vec![0.1, 0.2], std: vec![1.0] };
    assert!(matches!(preprocess(&img, (3, 4), 3, &bad_norm), Err(AppError::Config(_))));
}

#[test]
fn png_round_trip_and_decode_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = RgbImage::new(5, 3);
    img.put(4, 2, [10, 200, 30]);
    img.put(0, 0, [255, 0, 1]);
    let path = dir.path().join("a.png");
    write_png(&path, &img).unwrap();
    let back = read_png(&path).unwrap();
    assert_eq!((back.width, back.height, back.channels), (5, 3, 3));
    assert_eq!(back.data, img.data);

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not a png").unwrap();
    let err = read_png(&junk).unwrap_err();
    assert_eq!(err.kind(), "decode");
    assert_eq!(read_png(&dir.path().join("missing.png")).unwrap_err().kind(), "io");
}

#[test]
fn gif_frames_delay_and_loop() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<RgbImage> = (0..5).map(|i| RgbImage::filled(6, 4, [i * 50, 0, 255 - i * 50])).collect();
    let path = dir.path().join("a.gif");
    write_gif(&path, &frames, 2.0).unwrap();
    let gif = read_gif(&path).unwrap();
    assert_eq!((gif.width, gif.height), (6, 4));
    assert!(gif.infinite_loop);
    assert_eq!(gif.frames.len(), 5);
    for ((indices, delay), f) in gif.frames.iter().zip(&frames) {
        assert_eq!(*delay, 50);
        assert_eq!(indices, &quantize_to_cube(f));
    }
    // 252 cube colours, padded to the 256 entries a GIF palette needs
    assert_eq!(cube_palette().len(), 256 * 3);
    assert!(frames.iter().all(|f| quantize_to_cube(f).iter().all(|&i| i < 6 * 7 * 6)));
    assert!(write_gif(&dir.path().join("empty.gif"), &[], 2.0).is_err());
}

#[test]
fn number_format_examples() {
    assert_eq!(format_number(-3.5e-7), "-3.50E-07");
    assert_eq!(format_number(1.2345e-4), "1.23E-04");
    assert_eq!(format_number(0.0), "0");
    assert_eq!(format_number(0.25), "0.25");
    assert_eq!(format_number(12.5), "12.5");
    assert_eq!(format_signed(0.5), "+0.5");
    assert_eq!(format_signed(-2e-5), "-2.00E-05");
    for x in [0.123456789, 7.0, -0.001, 1e6] {
        assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
    }
}

#[test]
fn ybroad_rows_gain_a_trial_column() {
    let layers = fixture_architecture(0).list_layers().unwrap();
    let series = |off: f64| {
        let entries = layers[..5].iter().enumerate().map(|(i, l)| YbRoadEntry { layer: l.clone(), road: i as f64 + off }).collect();
        YbRoadSeries::from_entries(entries, vec![20.0, 40.0]).unwrap()
    };
    let (header, rows) = ybroad_rows(&[series(0.0)]);
    assert_eq!(header, ["exec_index", "layer_name", "road"]);
    assert_eq!(rows.len(), 5);
    let (header, rows) = ybroad_rows(&[series(0.0), series(0.5), series(1.0)]);
    assert_eq!(header[0], "trial");
    assert_eq!(rows.len(), 15);
    assert_eq!(rows[14], ["2", "4", "features.relu2", "5"]);
}
