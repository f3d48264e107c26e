use oatomo::io::{
    export_montage, export_pgm, read_image, read_pgm16, read_sinogram, sidecar_path, to_gray16, write_image,
    write_sinogram, write_tensor_field, Window,
};
use oatomo::{DetectionGeometry, Error, GridSpec, ImageGrid2D, Shape, Sinogram, TensorField2D};
use serde_json::{json, Value};

fn grid(nx: usize, ny: usize) -> GridSpec {
    GridSpec::new(nx, ny, 0.1).unwrap()
}

#[test]
fn image_round_trip_and_byte_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.img");
    let img = ImageGrid2D::new(grid(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    write_image(&path, &img, &json!({"command": "test"})).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mut expected = Vec::new();
    for v in [1.0f64, 2.0, 3.0, 4.0] {
        expected.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(bytes, expected);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(side["schema_version"], 1);
    assert_eq!(side["shape"], json!([2, 2]));
    assert_eq!(side["dtype"], "f64le");
    assert_eq!(side["provenance"]["command"], "test");
    let (back, meta) = read_image(&path).unwrap();
    assert_eq!(back, img);
    assert_eq!(meta.provenance["command"], "test");

    let odd = ImageGrid2D::new(grid(3, 2), vec![0.1, -2.5e-300, 1e300, 7.0, -0.0, 3.25]).unwrap();
    write_image(&path, &odd, &Value::Null).unwrap();
    let (back, _) = read_image(&path).unwrap();
    assert!(back.values().iter().zip(odd.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn truncated_payload_names_both_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.img");
    write_image(&path, &ImageGrid2D::new(grid(3, 3), vec![1.0; 9]).unwrap(), &Value::Null).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..60]).unwrap();
    let err = read_image(&path).unwrap_err();
    assert!(matches!(err, Error::SizeMismatch { expected: 72, actual: 60, .. }));
    let msg = err.to_string();
    assert!(msg.contains("72") && msg.contains("60"));
}

#[test]
fn missing_sidecar_and_bad_versions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.img");
    write_image(&path, &ImageGrid2D::new(grid(2, 2), vec![0.0; 4]).unwrap(), &Value::Null).unwrap();
    let side = sidecar_path(&path);
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
    doc["schema_version"] = json!(2);
    std::fs::write(&side, doc.to_string()).unwrap();
    assert!(read_image(&path).unwrap_err().to_string().contains("schema_version"));
    doc["schema_version"] = json!(1);
    doc["dtype"] = json!("f32le");
    std::fs::write(&side, doc.to_string()).unwrap();
    assert!(read_image(&path).is_err());
    std::fs::remove_file(&side).unwrap();
    assert!(matches!(read_image(&path), Err(Error::Io { .. })));
}

#[test]
fn non_finite_values_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.img");
    for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
        let img = ImageGrid2D::new(grid(2, 2), vec![0.0, bad, 0.0, 0.0]).unwrap();
        assert!(matches!(write_image(&path, &img, &Value::Null), Err(Error::NonFinite(1))));
    }
    assert!(!path.exists());
}

#[test]
fn sinogram_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.sino");
    let g = grid(16, 16);
    let geom = DetectionGeometry::for_grid(&g, 6.4, 270.0, 3, 1.5).unwrap();
    let ns = geom.n_samples;
    let values: Vec<f64> = (0..3 * ns).map(|k| k as f64 * 0.5).collect();
    let p = Sinogram::for_geometry(&geom, values).unwrap();
    write_sinogram(&path, &p, &geom, &Value::Null).unwrap();
    let (back, g2, _) = read_sinogram(&path).unwrap();
    assert_eq!(back, p);
    assert_eq!(g2, geom);
    // detector-major: (d = 1, t = 0) is flat element n_samples
    let bytes = std::fs::read(&path).unwrap();
    let at = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
    assert_eq!(at(ns), p.get(1, 0));
    assert_eq!(at(ns), ns as f64 * 0.5);

    let side = sidecar_path(&path);
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
    doc["metadata"]["geometry"]["arc_deg"] = json!(400.0);
    std::fs::write(&side, doc.to_string()).unwrap();
    assert!(matches!(read_sinogram(&path), Err(Error::InvalidGeometry(_))));

    let wrong = Sinogram::zeros(2, ns);
    assert!(write_sinogram(&path, &wrong, &geom, &Value::Null).is_err());
}

#[test]
fn tensor_export_is_interleaved() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.tensor");
    let s = Shape::new(2, 1);
    let a = TensorField2D::from_components(s, vec![1.0, 0.5], vec![0.0, 0.1], vec![1.0, 0.9]).unwrap();
    write_tensor_field(&path, &a, &Value::Null).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(vals, vec![1.0, 0.0, 1.0, 0.5, 0.1, 0.9]);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(side["shape"], json!([1, 2, 3]));
    assert_eq!(side["kind"], "tensor");
}

#[test]
fn pgm_mapping_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    let mid = ImageGrid2D::new(grid(4, 3), vec![0.5; 12]).unwrap();
    export_pgm(&mid, &path, Window::Fixed { lo: 0.0, hi: 1.0 }).unwrap();
    let (w, h, px) = read_pgm16(&path).unwrap();
    assert_eq!((w, h), (4, 3));
    assert!(px.iter().all(|&v| (32767..=32769).contains(&v)));
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n4 3\n65535\n"));
    assert_eq!(to_gray16(-3.0, 0.0, 1.0), 0);
    assert_eq!(to_gray16(0.0, 0.0, 1.0), 0);
    assert_eq!(to_gray16(1.0, 0.0, 1.0), 65535);
    assert_eq!(to_gray16(7.0, 0.0, 1.0), 65535);
    assert!(export_pgm(&mid, &path, Window::Fixed { lo: 1.0, hi: 1.0 }).is_err());
    // percentile window on a constant image still yields a valid map
    export_pgm(&mid, &path, Window::default()).unwrap();
}

#[test]
fn montage_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.pgm");
    let tiles: Vec<ImageGrid2D> =
        (0..9).map(|k| ImageGrid2D::new(grid(64, 64), vec![k as f64; 64 * 64]).unwrap()).collect();
    let legend: Vec<Value> = (0..9).map(|k| json!({"tile": k, "mad": 0.1 * k as f64})).collect();
    let (w, h) = export_montage(&tiles, 3, 3, &legend, &path, Window::Fixed { lo: 0.0, hi: 8.0 }).unwrap();
    assert_eq!((w, h), (196, 196));
    let (pw, ph, px) = read_pgm16(&path).unwrap();
    assert_eq!((pw, ph), (196, 196));
    // separators are white, tile (1, 1) holds value 4 -> mid grey
    assert_eq!(px[64], 65535);
    assert_eq!(px[66 * 196 + 66], to_gray16(4.0, 0.0, 8.0));
    let side: Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(side["tiles"].as_array().unwrap().len(), 9);
    assert_eq!(side["tiles"][4]["mad"], 0.4);

    assert!(export_montage(&[], 0, 0, &[], &path, Window::default()).is_err());
    let mixed = vec![tiles[0].clone(), ImageGrid2D::new(grid(32, 64), vec![0.0; 32 * 64]).unwrap()];
    assert!(export_montage(&mixed, 1, 2, &legend[..2], &path, Window::default()).is_err());
    assert!(export_montage(&tiles[..4], 3, 3, &legend, &path, Window::default()).is_err());
}
