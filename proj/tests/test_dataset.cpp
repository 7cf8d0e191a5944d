#include <doctest.h>

#include <filesystem>

#include "wcycle/dataset.hpp"

using namespace wcycle;

TEST_CASE("render is deterministic") {
  Factors f;
  f.identity = 3;
  f.x = 0.1;
  f.y = -0.2;
  f.rotation = 0.4;
  f.scale = 0.8;
  f.hue = 0.3;
  Image a = render(f);
  Image b = render(f);
  CHECK(a.data == b.data);
}

TEST_CASE("rotation by pi/2 is a symmetry of the 4-fold identity") {
  Factors f;
  f.identity = 0;
  f.x = 0.05;
  f.y = 0.02;
  f.scale = 0.9;
  f.hue = 0.1;
  f.rotation = 0.3;
  Image a = render(f);
  f.rotation = 0.3 + 1.5707963267948966;
  Image b = render(f);
  CHECK(image_max_absdiff(a, b) <= 1e-6);
}

TEST_CASE("irregular identities are not rotation invariant") {
  Factors f;
  f.identity = 1;
  f.rotation = 0.0;
  Image a = render(f);
  f.rotation = 0.5;
  Image b = render(f);
  CHECK(image_max_absdiff(a, b) > 0.05);
}

TEST_CASE("render rejects out-of-range factors") {
  Factors f;
  f.identity = 11;
  CHECK_THROWS(render(f));
  f.identity = 2;
  f.scale = 2.0;
  CHECK_THROWS(render(f));
  f.scale = 0.8;
  f.hue = 1.5;
  CHECK_THROWS(render(f));
}

TEST_CASE("render output range and occupancy") {
  Factors f;
  f.identity = 5;
  f.hue = 0.6;
  Image img = render(f);
  float lo = 1, hi = -1;
  for (float v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(lo < -0.5f);  // background present
  CHECK(hi > 0.0f);   // shape present
}

TEST_CASE("generate_dataset basics") {
  auto empty = generate_dataset(0, 1);
  CHECK(empty.size() == 0);

  auto a = generate_dataset(100, 42);
  auto b = generate_dataset(100, 42);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.factors(i).identity == b.factors(i).identity);
    CHECK(a.factors(i).rotation == b.factors(i).rotation);
    CHECK(a.factors(i).hue == b.factors(i).hue);
  }
  auto c = generate_dataset(100, 43);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a.factors(i).rotation != c.factors(i).rotation) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("train/holdout split is disjoint and seed-stable") {
  auto a = generate_dataset(200, 7);
  auto b = generate_dataset(200, 7);
  CHECK(a.train_indices() == b.train_indices());
  CHECK(a.holdout_indices() == b.holdout_indices());
  CHECK(a.holdout_indices().size() == 20);
  CHECK(a.train_indices().size() == 180);
  std::vector<bool> seen(200, false);
  for (size_t i : a.train_indices()) seen[i] = true;
  for (size_t i : a.holdout_indices()) {
    CHECK(!seen[i]);
    seen[i] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("dataset csv round-trips factors exactly") {
  namespace fs = std::filesystem;
  auto ds = generate_dataset(25, 99);
  std::string dir = "test_out_dataset";
  save_dataset(dir, ds, false);
  auto back = load_dataset_csv(dir + "/factors.csv", 99, 32);
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.factors(i).identity == ds.factors(i).identity);
    CHECK(back.factors(i).x == ds.factors(i).x);
    CHECK(back.factors(i).rotation == ds.factors(i).rotation);
    CHECK(back.factors(i).hue == ds.factors(i).hue);
    CHECK(back.image(i).data == ds.image(i).data);
  }
  fs::remove_all(dir);
}

TEST_CASE("png round trip and folder ingestion") {
  namespace fs = std::filesystem;
  std::string dir = "test_out_ingest";
  fs::create_directories(dir);
  auto ds = generate_dataset(6, 11);
  for (size_t i = 0; i < ds.size(); ++i)
    write_png(dir + "/" + std::to_string(i) + ".png", ds.image(i));
  // a junk file must be skipped, not fatal
  {
    std::ofstream junk(dir + "/notes.txt");
    junk << "not an image";
  }
  auto imgs = ingest_folder(dir, 32);
  REQUIRE(imgs.size() == 6);
  for (size_t i = 0; i < imgs.size(); ++i) {
    // 8-bit quantization tolerance
    CHECK(image_max_absdiff(imgs[i], ds.image(i)) <= 1.0 / 127.5 + 1e-6);
  }
  fs::remove_all(dir);
}

TEST_CASE("image grid and resize") {
  auto ds = generate_dataset(4, 3);
  auto grid = image_grid(ds.batch({0, 1, 2, 3}), 2);
  CHECK(grid.w == 2 * 32 + 2);
  CHECK(grid.h == 2 * 32 + 2);
  auto up = resize_bilinear(ds.image(0), 64, 64);
  CHECK(up.h == 64);
  auto down = resize_bilinear(up, 32, 32);
  CHECK(image_mse(down, ds.image(0)) < 0.01);
}
