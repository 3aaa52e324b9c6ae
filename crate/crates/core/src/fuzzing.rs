//! Parser entry points exercised by the fuzz targets and by the corpus
//! replay test. Each panics only on a broken invariant.

use crate::config::Config;
use crate::experiments::{emit_svg, parse_sweep_csv, Dataset, PlotKind, RunManifest, SweepRow, SweepSpec};
use crate::horseshoe::Word;

pub fn config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = Config::parse(text) {
        let back = Config::parse(&cfg.to_toml()).expect("serialized config parses");
        assert_eq!(back.to_toml(), cfg.to_toml());
        let _ = cfg.system.resolve();
        let _ = cfg.model.resolve();
        let _ = cfg.horseshoe.grid();
    }
}

pub fn sweep_spec(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = SweepSpec::parse(text) {
        if spec.validate().is_ok() && spec.rows_expected() <= 1 << 16 {
            assert_eq!(spec.points().len(), spec.grid_size());
        }
    }
}

pub fn sweep_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_sweep_csv(text) {
        for (line, _) in rows {
            assert!(SweepRow::parse(&line).is_ok());
        }
    }
}

pub fn word(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = text.parse::<Word>() {
        let again: Word = w.to_string().parse().expect("displayed word parses");
        assert_eq!(again, w);
    }
}

pub fn dataset(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = Dataset::from_csv(text) {
        if d.header.len() >= 3 {
            let (x, y, v) = (d.header[0].clone(), d.header[1].clone(), d.header[2].clone());
            let _ = emit_svg(&d, &PlotKind::Heatmap { x: x.clone(), y: y.clone(), value: v.clone() });
            let _ = emit_svg(&d, &PlotKind::Scatter { x, y, color: Some(v) });
        }
    }
}

pub fn manifest(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = RunManifest::parse(text) {
        assert_eq!(RunManifest::parse(&m.to_toml()).expect("manifest reparses"), m);
    }
}
