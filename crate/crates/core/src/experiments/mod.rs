//! Parameter sweeps, run manifests, plots and the torus-breakdown route.

pub mod manifest;
pub mod route;
pub mod svg;
pub mod sweep;

pub use manifest::{config_hash, RunManifest};
pub use route::{fold_count, invariant_graph, route_report, GraphCurve, RouteReport, RouteRow, RouteSpec, ROUTE_CSV_HEADER};
pub use svg::{emit_svg, Canvas, Dataset, PlotKind};
pub use sweep::{
    parse_sweep_csv, run_sweep, seeded_annulus_point, sweep_rows, AxisSpec, Backend, Param, Scale, SweepOutcome, SweepRow, SweepSpec,
    SweepTask, WORKERS_ENV,
};
