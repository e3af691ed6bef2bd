use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mqc_bench::chain;
use mqc_core::sequence::{
    mrev8_block, run_grid, AcquisitionSettings, Engine, ExperimentGrid, Mrev8Mode, PropagatorCache, ReversionBlock, RunOptions, SequenceTemplate,
};
use mqc_core::spectra::{fft2_coherence, Observable, SpectrumOptions};

fn template(tau1: f64) -> SequenceTemplate {
    SequenceTemplate {
        block: ReversionBlock::Mrev8 {
            mode: Mrev8Mode::Concatenate,
            tau1: Some(tau1),
        },
        acquisition: AcquisitionSettings::fixed(5e-6, 2e-6, Observable::Plus),
    }
}

fn eigensystem(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigensystem");
    for n in [4, 6, 8] {
        let sys = chain(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &sys, |b, s| b.iter(|| s.eigensystem().unwrap()));
    }
    g.finish();
}

fn compile(c: &mut Criterion) {
    let mut g = c.benchmark_group("compile_mrev8");
    for n in [4, 6] {
        let eig = chain(n).eigensystem().unwrap();
        let block = mrev8_block(5e-6, 16, Mrev8Mode::Concatenate).unwrap();
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| PropagatorCache::new(&eig).unwrap().compile(&block).unwrap())
        });
    }
    g.finish();
}

fn grid_run(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_grid");
    g.sample_size(10);
    for n in [4, 6] {
        let eig = chain(n).eigensystem().unwrap();
        let taus: Vec<f64> = (0..9).map(|i| i as f64 * 120e-6).collect();
        let grid = ExperimentGrid::new(64, 10e-6, 16, taus, 40e-6).unwrap();
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| run_grid(&eig, &template(10e-6), &grid, &Engine::Closed, &RunOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn spectra(c: &mut Criterion) {
    let eig = chain(5).eigensystem().unwrap();
    let taus: Vec<f64> = (0..9).map(|i| i as f64 * 120e-6).collect();
    let grid = ExperimentGrid::new(256, 10e-6, 32, taus, 40e-6).unwrap();
    let run = run_grid(&eig, &template(10e-6), &grid, &Engine::Closed, &RunOptions::default()).unwrap();
    c.bench_function("fft2_coherence", |b| {
        b.iter(|| fft2_coherence(&run.signals, &SpectrumOptions::display()).unwrap())
    });
}

criterion_group!(benches, eigensystem, compile, grid_run, spectra);
criterion_main!(benches);
