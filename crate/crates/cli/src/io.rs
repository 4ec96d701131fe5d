use std::path::Path;

use fluxgrad::fit::{FitParams, SpectrumData, FIT_DIM_FULL};
use fluxgrad::qubit::{f01_with_gradient, FluxoniumParams};

use crate::{CliResult, Failure};

pub fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Write to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(serde::Deserialize)]
struct Row {
    x: f64,
    eps: f64,
    p: f64,
}

pub fn read_spectrum(path: &Path) -> CliResult<SpectrumData> {
    let bad = |e: csv::Error| Failure::Input(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(bad)?;
    let rows = reader
        .deserialize()
        .map(|r| r.map(|r: Row| (r.x, r.eps, r.p)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(bad)?;
    let mut data = SpectrumData::from_triples(&rows)?;
    data.normalize()?;
    Ok(data)
}

pub fn f01_curve(x: &[f64], params: &FitParams) -> CliResult<String> {
    let mut out = String::from("x,f01\n");
    for &xv in x {
        let q = FluxoniumParams {
            ec: params.ec,
            ej: params.ej,
            el: params.el,
            phiext: params.a * xv + params.b,
        };
        let (f, _) = f01_with_gradient(q, FIT_DIM_FULL)?;
        out += &format!("{xv},{f}\n");
    }
    Ok(out)
}
