#include <vector>

#include <benchmark/benchmark.h>

#include "qsts/detector.hpp"
#include "qsts/geometry.hpp"
#include "qsts/simulator.hpp"

namespace {

using namespace qsts;

const SceneConfig kScene;

std::vector<MarkerPlacement> dome_markers() {
  return place_markers(kScene.dome(), kScene.grid, kScene.pitch_mm, kScene.marker_size_mm);
}

void BM_RenderClean(benchmark::State& state) {
  const Renderer renderer(kScene.camera, kScene.image_w, kScene.image_h);
  const auto placements = dome_markers();
  for (auto _ : state) {
    benchmark::DoNotOptimize(renderer.render_clean(placements, default_dictionary()));
  }
}
BENCHMARK(BM_RenderClean)->Unit(benchmark::kMillisecond);

void BM_DetectFrame(benchmark::State& state) {
  const GrayImage frame = render(kScene, dome_markers(), default_dictionary(), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(detect_frame(frame, default_dictionary()));
  }
}
BENCHMARK(BM_DetectFrame)->Unit(benchmark::kMillisecond);

void BM_PlanarPnp(benchmark::State& state) {
  const auto obj = marker_object_points(1.5);
  const Pose truth = Pose::from_axis_angle({0.3, -0.2, 0.1}, {2.0, -1.0, 52.0});
  std::vector<Eigen::Vector2d> img;
  for (const auto& p : obj) {
    img.push_back(project(p, truth, kScene.camera.intrinsics, kScene.camera.distortion));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        planar_pnp(obj, img, kScene.camera.intrinsics, kScene.camera.distortion));
  }
}
BENCHMARK(BM_PlanarPnp)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
