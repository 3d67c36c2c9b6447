//! Glue between the expansion, planning, and surrogate stages: flies an
//! aircraft pair through a family of wind fields and collects their
//! separation series on one shared time grid.
//!
//! Two families matter in practice: the reconstructed fields at the tensor
//! quadrature nodes (feeding the surrogate fit) and the raw ensemble
//! members (feeding the member-counting baseline). Both reduce to the same
//! operation, parallelized over fields with deterministic ordering.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ensemble::{WindEnsemble, WindMember};
use crate::error::PipelineError;
use crate::grid::WindGrid;
use crate::mukl::MuklExpansion;
use crate::trajectory::{haversine, AircraftSpec, Planner, RbfWindField, Trajectory};

/// Planned flights of one aircraft pair through a family of wind fields,
/// with their separations on a shared time grid.
#[derive(Debug, Clone)]
pub struct PairPlans {
    /// One trajectory pair per wind field, in field order.
    pub trajectories: Vec<(Trajectory, Trajectory)>,
    /// The shared time grid, long enough for the longest flight.
    pub times: Vec<f64>,
    /// Separations in meters, one row per field, one column per time step.
    /// Arrived flights hold at their destinations.
    pub separations: DMatrix<f64>,
}

/// Plans the pair through every given wind field and assembles the
/// separation matrix. Fields are processed in parallel; results keep the
/// input order.
///
/// # Errors
///
/// Returns an error if interpolation or planning fails for any field, or
/// if the two aircraft disagree on altitude (separation is undefined
/// across flight levels).
pub fn plan_pair_through_fields(
    grid: &WindGrid,
    fields: &[WindMember],
    a: &AircraftSpec,
    b: &AircraftSpec,
    planner: &(impl Planner + Sync),
    epsilon: Option<f64>,
) -> Result<PairPlans, PipelineError> {
    if a.altitude != b.altitude {
        return Err(PipelineError::Conflict(crate::error::ConflictError::ShapeMismatch {
            reason: format!(
                "aircraft {} and {} cruise at different altitudes; separation is undefined",
                a.id, b.id
            ),
        }));
    }

    let trajectories: Vec<(Trajectory, Trajectory)> = fields
        .par_iter()
        .map(|member| -> Result<_, PipelineError> {
            let wind = RbfWindField::from_member(grid, member, epsilon)?;
            let ta = planner.plan(a, &wind)?;
            let tb = planner.plan(b, &wind)?;
            Ok((ta, tb))
        })
        .collect::<Result<_, _>>()?;

    let (times, separations) = separation_matrix(&trajectories);
    Ok(PairPlans { trajectories, times, separations })
}

/// Separations of already planned trajectory pairs on the longest shared
/// grid. All pairs must come from the same planner configuration.
pub fn separation_matrix(pairs: &[(Trajectory, Trajectory)]) -> (Vec<f64>, DMatrix<f64>) {
    let n_steps = pairs
        .iter()
        .map(|(ta, tb)| ta.len().max(tb.len()))
        .max()
        .unwrap_or(0);
    let (t0, dt) = pairs
        .first()
        .map(|(ta, _)| (ta.t0(), ta.dt()))
        .unwrap_or((0.0, 1.0));
    let times: Vec<f64> = (0..n_steps).map(|i| t0 + i as f64 * dt).collect();
    let separations = DMatrix::from_fn(pairs.len(), n_steps, |r, t| {
        let (ta, tb) = &pairs[r];
        haversine(ta.position_at(t), tb.position_at(t), ta.radius_m())
    });
    (times, separations)
}

/// Plans the pair through the wind field reconstructed at each quadrature
/// node tuple of the expansion.
///
/// # Errors
///
/// Returns an error if reconstruction, interpolation, or planning fails.
pub fn plan_pair_at_nodes(
    expansion: &MuklExpansion,
    node_tuples: &[Vec<f64>],
    a: &AircraftSpec,
    b: &AircraftSpec,
    planner: &(impl Planner + Sync),
    epsilon: Option<f64>,
) -> Result<PairPlans, PipelineError> {
    let fields: Vec<WindMember> = node_tuples
        .iter()
        .map(|tuple| expansion.reconstruct_member(tuple))
        .collect::<Result<_, _>>()?;
    plan_pair_through_fields(expansion.grid(), &fields, a, b, planner, epsilon)
}

/// Plans the pair through every raw ensemble member, the input to the
/// member-counting baseline.
///
/// # Errors
///
/// Returns an error if interpolation or planning fails for any member.
pub fn plan_pair_per_member(
    ensemble: &WindEnsemble,
    a: &AircraftSpec,
    b: &AircraftSpec,
    planner: &(impl Planner + Sync),
    epsilon: Option<f64>,
) -> Result<PairPlans, PipelineError> {
    plan_pair_through_fields(ensemble.grid(), ensemble.members(), a, b, planner, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{generate_synthetic_ensemble, SyntheticSpec};
    use crate::trajectory::WindCorrectedPlanner;
    use approx::assert_abs_diff_eq;

    fn crossing_pair() -> (AircraftSpec, AircraftSpec) {
        let a = AircraftSpec {
            id: "A".into(),
            origin: (41.0, 1.0),
            destination: (44.0, 4.0),
            airspeed: 230.0,
            altitude: 11_000.0,
        };
        let b = AircraftSpec {
            id: "B".into(),
            origin: (44.0, 1.0),
            destination: (41.0, 4.0),
            airspeed: 230.0,
            altitude: 11_000.0,
        };
        (a, b)
    }

    #[test]
    fn member_plans_share_one_grid_and_keep_member_order() {
        let grid = WindGrid::regular(40.0, 0.0, 1.0, 6, 6).unwrap();
        let spec = SyntheticSpec {
            correlation_length_deg: 5.0,
            cross_correlation: 0.3,
            sigma_u: 2.0,
            sigma_v: 2.0,
            mean_u: 5.0,
            mean_v: -2.0,
        };
        let ensemble = generate_synthetic_ensemble(&grid, 6, 99, &spec).unwrap();
        let (a, b) = crossing_pair();
        let planner = WindCorrectedPlanner::default();

        let plans = plan_pair_per_member(&ensemble, &a, &b, &planner, None).unwrap();
        assert_eq!(plans.trajectories.len(), 6);
        assert_eq!(plans.separations.nrows(), 6);
        assert_eq!(plans.separations.ncols(), plans.times.len());

        // Rerunning produces identical output: parallelism must not
        // reorder anything.
        let again = plan_pair_per_member(&ensemble, &a, &b, &planner, None).unwrap();
        assert_eq!(plans.separations, again.separations);

        // The matrix really is the per-pair separation series.
        let (ta, tb) = &plans.trajectories[3];
        let direct = crate::trajectory::separation_series(ta, tb).unwrap();
        for (t, d) in direct.iter().enumerate() {
            assert_abs_diff_eq!(plans.separations[(3, t)], *d, epsilon = 1e-9);
        }
        // Beyond both arrivals the pair holds at the destination distance.
        let held = haversine(a.destination, b.destination, ta.radius_m());
        let last = plans.separations.ncols() - 1;
        assert_abs_diff_eq!(plans.separations[(3, last)], held, epsilon = 1.0);
    }

    #[test]
    fn different_altitudes_are_rejected() {
        let grid = WindGrid::regular(40.0, 0.0, 1.0, 4, 4).unwrap();
        let member = WindMember {
            u: nalgebra::DMatrix::zeros(4, 4),
            v: nalgebra::DMatrix::zeros(4, 4),
        };
        let (a, mut b) = crossing_pair();
        b.altitude = 10_000.0;
        let planner = WindCorrectedPlanner::default();
        assert!(plan_pair_through_fields(&grid, &[member], &a, &b, &planner, None).is_err());
    }
}
