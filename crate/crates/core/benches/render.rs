use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Point3;

use skinsynth_core::geometry::{LabelTable, SurfaceSampler};
use skinsynth_core::grid::{Grid, LabelImage};
use skinsynth_core::par;
use skinsynth_core::procedural::{skin_texture, uv_sphere};
use skinsynth_core::renderer::{rasterize, shade, Camera, Lights, Material, PointLight};
use skinsynth_core::synthesis::RenderScene;

/// Variants compared: a one-thread pool against the default pool. Without
/// the `parallel` feature only the sequential path exists.
fn variants() -> Vec<(&'static str, Option<usize>)> {
    let mut v = vec![("sequential", Some(1))];
    if par::PARALLEL {
        v.push(("parallel", None));
    }
    v
}

fn run_with<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => par::with_threads(n, f),
        None => f(),
    }
}

fn shading(c: &mut Criterion) {
    let mesh = uv_sphere(Point3::origin(), 1.0, 128, 64).unwrap();
    let texture = skin_texture(1024, 1024, 1);
    let eye = Point3::new(0.0, 0.3, 2.2);
    let camera = Camera::new(eye, Point3::origin(), 512, 512);
    let lights = Lights::single(PointLight::gray(eye, 0.5, 0.5, 0.05));
    let material = Material::new(0.03, 40.0);
    let mut group = c.benchmark_group("rasterize_shade_512");
    for (name, threads) in variants() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            run_with(threads, || {
                b.iter(|| {
                    let frags = rasterize(&mesh, &camera);
                    shade(&frags, &mesh, &texture, &lights, &material).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bundle(c: &mut Criterion) {
    let mesh = uv_sphere(Point3::origin(), 1.0, 128, 64).unwrap();
    let texture = skin_texture(1024, 1024, 1);
    let ids: LabelImage = Grid::new(1024, 1024);
    let nonskin: LabelImage = Grid::new(1024, 1024);
    let table = LabelTable::default();
    let mut scene = RenderScene::new(&mesh, &texture, &ids, &nonskin, &table, &[]).unwrap();
    scene.view_size = 512;
    let sampler = SurfaceSampler::new(&mesh).unwrap();
    let mut group = c.benchmark_group("annotated_view_512");
    group.sample_size(20);
    for (name, threads) in variants() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            run_with(threads, || b.iter(|| scene.view(&sampler, 1, 0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, shading, bundle);
criterion_main!(benches);
