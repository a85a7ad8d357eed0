//! End-to-end checks across density, shape, FPCA and CCA stages.

use tfcca::cca::cca;
use tfcca::density::Pdf;
use tfcca::fpca::{tangent_mode_pipeline, GroupData, PipelineConfig, RankRule, TangentMode};
use tfcca::numerics::{inner_product, norm, Grid};
use tfcca::shape::{srvf, ShapeConfig, Srvf};
use tfcca::simgen::{gen_curve_group, gen_pdf_group, CurveSimSpec, PdfSimSpec, Regime};
use tfcca::Error;

fn pdfs(group: u8, seed: u64) -> Vec<Pdf> {
    let grid = Grid::new(201).unwrap();
    gen_pdf_group(&PdfSimSpec { group, n: 30, grid, seed }).unwrap()
}

fn shapes(n: usize) -> Vec<Srvf> {
    let mut spec = CurveSimSpec::new(Regime::High, n, 2);
    spec.n_points = 60;
    let cfg = ShapeConfig::default();
    gen_curve_group(&spec).unwrap().group_1.iter().map(|c| srvf(c, &cfg).unwrap()).collect()
}

fn config(rank: usize) -> PipelineConfig {
    PipelineConfig::new(RankRule::Fixed(rank), RankRule::Fixed(rank))
}

#[test]
fn density_groups_run_in_every_mode() {
    let (a, b) = (pdfs(2, 1), pdfs(3, 1));
    for mode in [TangentMode::Separate, TangentMode::Pooled, TangentMode::Transport] {
        let out = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Pdfs(&b), mode, &config(3)).unwrap();
        for g in [&out.a, &out.b] {
            assert_eq!(g.coefficients.values().shape(), (30, 3));
            assert_eq!(g.coefficients.provenance().mode, mode);
            assert!(g.mean_converged);
            for t in &g.tangents {
                let along = inner_product(t.vector(), g.base.function()).unwrap();
                assert!(along.abs() < 1e-6, "{mode:?}: {along:e}");
                let energy: f64 = g.basis.eigenfunctions().iter().map(|e| inner_product(t.vector(), e.vector()).unwrap().powi(2)).sum();
                assert!(energy <= norm(t.vector()).powi(2) * (1.0 + 1e-10));
            }
        }
        let r = cca(out.a.coefficients.values(), out.b.coefficients.values(), 0.0).unwrap();
        assert!(r.correlations.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.correlations.iter().all(|c| (0.0..=1.0 + 1e-12).contains(c)));
    }
}

#[test]
fn swapping_groups_keeps_correlations() {
    let (a, b) = (pdfs(1, 4), pdfs(3, 4));
    let cfg = config(2);
    let ab = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Pdfs(&b), TangentMode::Separate, &cfg).unwrap();
    let ba = tangent_mode_pipeline(GroupData::Pdfs(&b), GroupData::Pdfs(&a), TangentMode::Separate, &cfg).unwrap();
    let r1 = cca(ab.a.coefficients.values(), ab.b.coefficients.values(), 0.0).unwrap();
    let r2 = cca(ba.a.coefficients.values(), ba.b.coefficients.values(), 0.0).unwrap();
    for (x, y) in r1.correlations.iter().zip(&r2.correlations) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn identical_groups_are_perfectly_correlated() {
    let a = pdfs(3, 9);
    let out = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Pdfs(&a), TangentMode::Pooled, &config(3)).unwrap();
    let r = cca(out.a.coefficients.values(), out.b.coefficients.values(), 0.0).unwrap();
    assert!(r.correlations.iter().all(|c| (c - 1.0).abs() < 1e-8), "{:?}", r.correlations);
}

#[test]
fn mixed_kinds_need_separate_spaces() {
    let a = pdfs(2, 3);
    let s = shapes(a.len());
    let cfg = config(2);
    let out = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Shapes(&s), TangentMode::Separate, &cfg).unwrap();
    assert!(out.b.shape_mean.is_some() && out.a.shape_mean.is_none());
    let r = cca(out.a.coefficients.values(), out.b.coefficients.values(), 0.0).unwrap();
    assert_eq!(r.correlations.len(), 2);
    for mode in [TangentMode::Pooled, TangentMode::Transport] {
        let err = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Shapes(&s), mode, &cfg).unwrap_err();
        assert!(matches!(err, Error::IncompatibleMode { .. }));
    }
}

#[test]
fn unequal_group_sizes_are_rejected() {
    let a = pdfs(1, 0);
    let err = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Pdfs(&a[1..]), TangentMode::Separate, &config(2)).unwrap_err();
    assert_eq!(err, Error::LengthMismatch { expected: 30, actual: 29 });
}
