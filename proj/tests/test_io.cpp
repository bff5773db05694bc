#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "tebi/data.hpp"
#include "tebi/io.hpp"

using namespace tebi;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tebi_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<TrajectoryRecord> small_dataset() {
  auto mats = default_materials();
  std::vector<TrajectoryRecord> recs;
  for (int i = 0; i < 3; ++i)
    recs.push_back(generate_trajectory(mats[(i * 3) % 8], 8, 11, i, 4, 4));
  return recs;
}

void flip_byte(const fs::path& file, std::streamoff pos) {
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(pos);
  char c = 0;
  f.read(&c, 1);
  c ^= 0x40;
  f.seekp(pos);
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("dataset round-trips bit-exactly") {
  auto dir = fresh_dir("roundtrip");
  auto recs = small_dataset();
  write_dataset(recs, dir);
  auto back = read_dataset(dir);
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].trajectory_id == recs[i].trajectory_id);
    CHECK(back[i].material.class_id == recs[i].material.class_id);
    CHECK(back[i].material.keywords == recs[i].material.keywords);
    CHECK(back[i].material.relaxation_time == recs[i].material.relaxation_time);
    CHECK(back[i].length == recs[i].length);
    CHECK(back[i].stages.contact_start == recs[i].stages.contact_start);
    REQUIRE(back[i].frames.size() == recs[i].frames.size());
    for (size_t t = 0; t < recs[i].frames.size(); ++t) {
      CHECK(back[i].frames[t].visual.data == recs[i].frames[t].visual.data);
      CHECK(back[i].frames[t].tactile.data == recs[i].frames[t].tactile.data);
      CHECK(back[i].frames[t].time_index == recs[i].frames[t].time_index);
    }
  }
}

TEST_CASE("an empty dataset writes and reads as empty") {
  auto dir = fresh_dir("empty");
  write_dataset({}, dir);
  CHECK(read_dataset(dir).empty());
}

TEST_CASE("a flipped blob byte is reported as a checksum mismatch with location") {
  auto dir = fresh_dir("cksum");
  write_dataset(small_dataset(), dir);
  flip_byte(dir / "frames.bin", 100);
  CHECK_THROWS_WITH(read_dataset(dir),
                    Catch::Matchers::ContainsSubstring("checksum mismatch") &&
                        Catch::Matchers::ContainsSubstring("frames.bin"));
}

TEST_CASE("a truncated blob is reported with the missing range") {
  auto dir = fresh_dir("trunc");
  write_dataset(small_dataset(), dir);
  fs::resize_file(dir / "frames.bin", 64);
  CHECK_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("a manifest length inconsistent with the grid is rejected") {
  auto dir = fresh_dir("badlen");
  write_dataset(small_dataset(), dir);
  // claim 9 frames on the first record; its byte count then cannot match
  std::ifstream in(dir / "manifest.txt");
  std::string header, line, rest;
  std::getline(in, header);
  std::getline(in, line);
  std::string tail((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto p1 = line.find(' ');
  auto p2 = line.find(' ', p1 + 1);
  auto p3 = line.find(' ', p2 + 1);
  line = line.substr(0, p2 + 1) + "9" + line.substr(p3);
  std::ofstream out(dir / "manifest.txt");
  out << header << "\n" << line << "\n" << tail;
  out.close();
  CHECK_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("does not match"));
}

TEST_CASE("a corrupt magic header is rejected") {
  auto dir = fresh_dir("magic");
  write_dataset(small_dataset(), dir);
  flip_byte(dir / "manifest.txt", 2);
  CHECK_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("corrupt header"));
}

TEST_CASE("checkpoints restore parameter values bit-exactly") {
  auto dir = fresh_dir("ckpt");
  std::mt19937_64 rng(5);
  Parameter a("enc.a", Tensor::randn(3, 4, rng));
  Parameter b("enc.b", Tensor::randn(1, 7, rng));
  Tensor a0 = a.value, b0 = b.value;
  write_checkpoint({&a, &b}, dir);
  a.value = Tensor(3, 4);
  b.value = Tensor(1, 7);
  read_checkpoint({&a, &b}, dir);
  CHECK(a.value.data == a0.data);
  CHECK(b.value.data == b0.data);
}

TEST_CASE("checkpoint loading validates names, shapes, and checksums") {
  auto dir = fresh_dir("ckpt_bad");
  std::mt19937_64 rng(5);
  Parameter a("enc.a", Tensor::randn(3, 4, rng));
  write_checkpoint({&a}, dir);

  Parameter missing("enc.zzz", Tensor(3, 4));
  CHECK_THROWS_WITH(read_checkpoint({&missing}, dir),
                    Catch::Matchers::ContainsSubstring("parameter not found") &&
                        Catch::Matchers::ContainsSubstring("enc.zzz"));

  Parameter wrong_shape("enc.a", Tensor(4, 3));
  CHECK_THROWS_WITH(read_checkpoint({&wrong_shape}, dir),
                    Catch::Matchers::ContainsSubstring("shape"));

  flip_byte(dir / "params.bin", 9);
  CHECK_THROWS_WITH(read_checkpoint({&a}, dir),
                    Catch::Matchers::ContainsSubstring("checksum mismatch"));
}
