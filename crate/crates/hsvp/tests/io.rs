use hsvp::io::*;
use hsvp::poisson::DecayCertificate;
use hsvp::Error;
use proptest::prelude::*;
use std::path::PathBuf;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const MINIMAL: &str = r#"
schema_version = 1
[world]
[species.plus]
mass = 1.0
charge = 1.0
[species.minus]
mass = 1.0
charge = -1.0
[boundary.plus]
kind = "zero"
[boundary.minus]
kind = "zero"
"#;

fn config_error(text: &str) -> String {
    match RunConfig::from_toml_str(text) {
        Err(Error::Config(msg)) => msg,
        Err(e) => panic!("expected a config error, got {e}"),
        Ok(_) => panic!("config accepted:\n{text}"),
    }
}

#[test]
fn shipped_configs_parse() {
    for name in ["isothermal.toml", "asymmetric.toml", "ballistic.toml", "poisson.toml"] {
        let cfg = RunConfig::from_path(&config_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.steady_config().unwrap().validate().unwrap();
    }
}

#[test]
fn defaults_fill_optional_sections() {
    let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
    let w = cfg.world();
    assert_eq!((w.c, w.g, w.b3, w.beta, w.beta_tilde, w.epsilon), (1.0, 1.0, 0.0, 1.0, 1.0, 0.0));
    assert_eq!(cfg.steady.max_iter, 30);
    assert_eq!(cfg.dynamics.np % 8, 0);
    assert!(cfg.trace.is_none());
    // t_end falls back to horizons / lambda with lambda = g beta m_hat / 48
    assert!((cfg.t_end().unwrap() - 10.0 * 48.0).abs() < 1e-9);
}

#[test]
fn boundary_kinds_round_trip() {
    let text = MINIMAL.replace(
        "[boundary.plus]\nkind = \"zero\"",
        "[boundary.plus]\nkind = \"simple_non_isothermal\"\np_max = 4.0\n[boundary.plus.temperature]\nbase = 1.0\namplitude = 1.0\noffset = 20.0\npower = 4.0",
    );
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    let [plus, minus] = cfg.boundary_specs();
    assert_eq!(plus.p_max, Some(4.0));
    assert!(minus.is_zero());
    let back = toml::to_string(&cfg).unwrap();
    let again = RunConfig::from_toml_str(&back).unwrap();
    assert_eq!(toml::to_string(&again).unwrap(), back);
}

#[test]
fn errors_name_the_offending_field() {
    let msg = config_error(&MINIMAL.replace("mass = 1.0\ncharge = -1.0", "mass = -2.0\ncharge = -1.0"));
    assert!(msg.starts_with("species.minus.mass"), "{msg}");
    let msg = config_error(&MINIMAL.replace("[world]", "[world]\nbeta = \"big\""));
    assert!(msg.starts_with("world.beta"), "{msg}");
    let msg = config_error(&MINIMAL.replace("[world]", "[world]\ngamma = 1.0"));
    assert!(msg.starts_with("world") && msg.contains("gamma"), "{msg}");
    let msg = config_error(&MINIMAL.replace("kind = \"zero\"\n[boundary.minus]", "kind = \"maxwell\"\n[boundary.minus]"));
    assert!(msg.starts_with("boundary.plus"), "{msg}");
    let msg = config_error(&MINIMAL.replace("schema_version = 1", "schema_version = 2"));
    assert!(msg.starts_with("schema_version"), "{msg}");
    let msg = config_error(&format!("{MINIMAL}\n[dynamics]\nnp = 12\n"));
    assert!(msg.starts_with("dynamics"), "{msg}");
    let msg = config_error("schema_version = [");
    assert!(msg.starts_with("syntax"), "{msg}");
    let msg = config_error(&format!("{MINIMAL}\n[poisson]\ninput = \"a.csv\"\ncertificate_rate = 1.0\n"));
    assert!(msg.starts_with("poisson"), "{msg}");
}

#[test]
fn slab_csv_reads_comments_and_rejects_bad_rows() {
    let good = "# density\nx3,rho\n0,1\n0.5, 0.6\n1.0,0.3\n";
    let p = read_slab_csv(good.as_bytes(), Some(DecayCertificate { amplitude: 1.0, rate: 1.0 })).unwrap();
    assert_eq!(p.x, vec![0.0, 0.5, 1.0]);
    assert_eq!(p.rho, vec![1.0, 0.6, 0.3]);
    for bad in ["x,rho\n0,1\n1,2\n", "x3,rho\n0,1\n1,abc\n", "x3,rho\n0,1\n1,2,3\n", "x3,rho\n1,1\n0,2\n", "x3,rho\n0.5,1\n1,2\n", ""] {
        assert!(matches!(read_slab_csv(bad.as_bytes(), None), Err(Error::Csv(_))), "accepted {bad:?}");
    }
    let shipped = std::fs::File::open(config_dir().join("exp_density.csv")).unwrap();
    let p = read_slab_csv(shipped, None).unwrap();
    assert_eq!(p.x.len(), 201);
}

#[test]
fn sha256_matches_the_standard_vector() {
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn tables_carry_the_hash_and_round_trip_floats() {
    let mut buf = Vec::new();
    let v = 0.1 + 0.2;
    write_table(&mut buf, "deadbeef", &["a", "b"], vec![vec![1.0, v], vec![1e-300, -0.0]]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# config_sha256=deadbeef"));
    assert_eq!(lines.next(), Some("a,b"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[1].to_bits(), v.to_bits());
}

#[test]
fn manifest_serializes_its_fields() {
    let mut m = Manifest::new("00", 3, "trace");
    m.artifacts.push("trajectory.csv".into());
    m.results.insert("t_exit".into(), serde_json::json!(1.5));
    let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["results"]["t_exit"], 1.5);
}

proptest! {
    #[test]
    fn config_parser_never_panics(s in "\\PC{0,200}") {
        let _ = RunConfig::from_toml_str(&s);
    }

    #[test]
    fn csv_reader_never_panics(s in "[0-9x3rho,.#e\\-\\n ]{0,200}") {
        let _ = read_slab_csv(s.as_bytes(), None);
    }
}
