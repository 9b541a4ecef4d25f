use gpdf::bench::run_benchmark;
use gpdf::inducing::select_pseudo_points;
use gpdf::io::{load_point_cloud, save_mesh_ply, PointFormat};
use gpdf::mesher::{extract_contour_2d, extract_isosurface_3d, polyline_length};
use gpdf::odometry::{register_scan, RegistrationOptions};
use gpdf::persist;
use gpdf::{
    scenes, DistanceField, Field, FieldConfig, FieldVariant, GridSpec, PointCloud, Pose, SubmapGrid, SubmapParams,
};

fn circle_grid() -> GridSpec {
    GridSpec::new(vec![-1.6, -1.6], vec![1.6, 1.6], 0.04)
}

#[test]
fn mesh_vertices_round_trip_through_ply() {
    let cloud = scenes::sphere(300, 1.0);
    let field = Field::build_default(&cloud, FieldVariant::LogGpis).unwrap();
    let grid = GridSpec::new(vec![-1.3; 3], vec![1.3; 3], 0.1).with_iso(0.05);
    let mesh = extract_isosurface_3d(&field, &grid).unwrap();
    assert!(mesh.is_valid() && !mesh.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sphere.ply");
    save_mesh_ply(&path, &mesh).unwrap();
    let back = load_point_cloud(&path, PointFormat::Ply).unwrap();
    assert_eq!(back.len(), mesh.vertices.len());
    for (p, v) in back.iter().zip(&mesh.vertices) {
        assert_eq!(p, v.as_slice());
    }
}

#[test]
fn single_block_grid_matches_a_monolithic_field() {
    // everything fits in one block, so fusion has a single member
    let cloud = scenes::circle(96, 0.4, [0.6, 0.6]);
    let cfg = FieldConfig::from_cloud(&cloud, FieldVariant::Reverting).unwrap();
    let params = SubmapParams {
        block_size: 1.2,
        halo_margin: 0.3,
        max_points_per_block: 400,
        downsample_resolution: 1e-4,
    };
    let mut grid = SubmapGrid::new(2, cfg, params).unwrap();
    grid.insert_points(&cloud, &Pose::identity(2)).unwrap();
    assert_eq!(grid.block_count(), 1);
    let field = Field::build(&cloud, cfg).unwrap();
    for q in [[0.6, 0.6], [0.3, 0.9], [1.1, 0.2], [0.65, 1.05]] {
        assert_eq!(grid.sample(&q).unwrap(), field.query(&q).unwrap());
    }
}

#[test]
fn pseudo_point_refit_keeps_accuracy() {
    let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
    let field = Field::build_default(&cloud, FieldVariant::LogGpis).unwrap();
    let set = select_pseudo_points(&field, &cloud.to_vecs(), 0.15, 40).unwrap();
    assert!(set.len() >= 30 && set.residuals.iter().all(|r| *r < 1e-2));
    let refit = Field::build(&set.points, *field.config()).unwrap();
    let full = run_benchmark(&field, &cloud, &circle_grid(), [0.05, 0.5])
        .unwrap()
        .summary
        .rmse;
    let sparse = run_benchmark(&refit, &cloud, &circle_grid(), [0.05, 0.5])
        .unwrap()
        .summary
        .rmse;
    assert!(sparse <= 2.0 * full, "{sparse} vs {full}");
}

#[test]
fn contour_of_saved_model_has_the_expected_length() {
    let cloud = scenes::circle(200, 1.0, [0.0, 0.0]);
    let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("circle.bin");
    persist::save_field(&path, &field).unwrap();
    let model = persist::load_model(&path).unwrap();

    let iso = 0.2;
    let lines = extract_contour_2d(
        &model,
        &GridSpec::new(vec![-1.5, -1.5], vec![1.5, 1.5], 0.02).with_iso(iso),
    )
    .unwrap();
    let mut lengths: Vec<f64> = lines.iter().map(polyline_length).collect();
    lengths.sort_by(f64::total_cmp);
    assert_eq!(lengths.len(), 2);
    let expect = [
        2.0 * std::f64::consts::PI * (1.0 - iso),
        2.0 * std::f64::consts::PI * (1.0 + iso),
    ];
    for (got, want) in lengths.iter().zip(expect) {
        assert!((got - want).abs() / want < 0.03, "{got} vs {want}");
    }
}

#[test]
fn sequential_scans_register_against_a_grown_submap_grid() {
    let map = scenes::l_shape(300, 1.0);
    let cfg = FieldConfig::from_cloud(&map, FieldVariant::Reverting).unwrap();
    let mut grid = SubmapGrid::new(2, cfg, SubmapParams::for_length_scale(cfg.kernel.length_scale)).unwrap();
    grid.insert_points(&map, &Pose::identity(2)).unwrap();

    let truth = Pose::from_2d(0.03, -0.02, 2f64.to_radians());
    let flat = map.iter().flat_map(|p| truth.inverse().apply(p)).collect();
    let scan = PointCloud::from_flat(2, flat).unwrap();
    let report = register_scan(&grid, &scan, &Pose::identity(2), &RegistrationOptions::default()).unwrap();
    assert!((report.pose.translation() - truth.translation()).norm() < 5e-3);
    assert!((report.pose.angle() - truth.angle()).abs() < 0.5f64.to_radians());

    // re-inserting the scan through the recovered pose lands on existing voxels
    let before = grid.point_count();
    let ins = grid.insert_points(&scan, &report.pose).unwrap();
    assert!(ins.duplicates + ins.overflow >= scan.len() * 9 / 10, "{ins:?}");
    assert!(grid.point_count() <= before + scan.len() / 10);
}
