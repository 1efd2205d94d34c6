#include <poseval/archive.hpp>
#include <poseval/datasets.hpp>

#include "support/fixtures.hpp"

#include <gtest/gtest.h>
#include <malloc.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <functional>
#include <random>

using namespace poseval;
using poseval::testing::read_file;
using poseval::testing::TempDir;
using poseval::testing::write_file;

namespace {

DatasetArchive small_archive() {
  DatasetArchive a;
  a.manifest = {{"kind", "test"}, {"note", "round trip"}, {"counts", {{"samples", 3}}}};
  Tensor t{{3, 2, 2}, {}};
  for (int i = 0; i < 12; ++i) t.data.push_back(0.25f * static_cast<float>(i) - 1.0f);
  t.data[5] = std::numeric_limits<float>::denorm_min();
  t.data[6] = -0.0f;
  a.tensors["alpha"] = t;
  a.tensors["beta"] = Tensor{{3, 1}, {1e30f, -7.5f, 3.0f}};
  return a;
}

// Independent minimal "stored" zip writer used to build archives the library
// writer would refuse to produce.
void put16(std::string& s, unsigned v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put32(std::string& s, unsigned long v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_zip(const std::string& path, const std::vector<std::pair<std::string, std::string>>& files,
               unsigned method = 0) {
  std::string body, central;
  for (const auto& [name, data] : files) {
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
    const auto offset = body.size();
    put32(body, 0x04034b50);
    put16(body, 20);
    put16(body, 0);
    put16(body, method);
    put16(body, 0);
    put16(body, 0x21);
    put32(body, crc);
    put32(body, data.size());
    put32(body, data.size());
    put16(body, static_cast<unsigned>(name.size()));
    put16(body, 0);
    body += name + data;
    put32(central, 0x02014b50);
    put16(central, 20);
    put16(central, 20);
    put16(central, 0);
    put16(central, method);
    put16(central, 0);
    put16(central, 0x21);
    put32(central, crc);
    put32(central, data.size());
    put32(central, data.size());
    put16(central, static_cast<unsigned>(name.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central += name;
  }
  std::string end;
  put32(end, 0x06054b50);
  put16(end, 0);
  put16(end, 0);
  put16(end, static_cast<unsigned>(files.size()));
  put16(end, static_cast<unsigned>(files.size()));
  put32(end, central.size());
  put32(end, body.size());
  put16(end, 0);
  write_file(path, body + central + end);
}

std::string floats(std::initializer_list<float> v) {
  std::string s(v.size() * 4, '\0');
  std::memcpy(s.data(), std::data(v), s.size());
  return s;
}

ArchiveError::Kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ArchiveError& e) {
    return e.kind;
  }
  ADD_FAILURE() << "expected ArchiveError";
  return ArchiveError::Kind::io;
}

std::size_t live_heap() {
  const auto m = mallinfo2();
  return m.uordblks + m.hblkhd;
}

}  // namespace

TEST(Archive, RoundTripIsBitIdentical) {
  TempDir dir;
  const DatasetArchive a = small_archive();
  write_archive(dir.file("a.zip"), a);
  const DatasetArchive back = read_archive(dir.file("a.zip"));
  EXPECT_EQ(back.manifest, a.manifest);
  ASSERT_EQ(back.tensors.size(), a.tensors.size());
  for (const auto& [k, t] : a.tensors) {
    const Tensor& u = back.tensors.at(k);
    EXPECT_EQ(u.shape, t.shape);
    ASSERT_EQ(u.data.size(), t.data.size());
    EXPECT_EQ(std::memcmp(u.data.data(), t.data.data(), t.data.size() * sizeof(float)), 0) << k;
  }
  write_archive(dir.file("b.zip"), back);
  EXPECT_EQ(read_file(dir.file("a.zip")), read_file(dir.file("b.zip")));
}

TEST(Archive, IsAPlainStoredZip) {
  TempDir dir;
  write_archive(dir.file("a.zip"), small_archive());
  const std::string bytes = read_file(dir.file("a.zip"));
  EXPECT_EQ(bytes.substr(0, 4), std::string("PK\x03\x04", 4));
  EXPECT_NE(bytes.find("alpha.f32"), std::string::npos);
  EXPECT_NE(bytes.find("manifest.json"), std::string::npos);
  // raw little-endian float32 payload is present verbatim
  EXPECT_NE(bytes.find(floats({1e30f, -7.5f, 3.0f})), std::string::npos);
  ArchiveReader reader(dir.file("a.zip"));
  EXPECT_EQ(reader.manifest()["format_version"], kArchiveFormatVersion);
  EXPECT_EQ(reader.manifest()["tensors"]["beta"]["shape"], nlohmann::json::array({3, 1}));
}

TEST(Archive, ReadsZipFromAnIndependentWriter) {
  TempDir dir;
  const std::string manifest =
      R"({"format_version":1,"kind":"x","tensors":{"v":{"shape":[2,2],"dtype":"float32"}}})";
  write_zip(dir.file("z.zip"), {{"v.f32", floats({1, 2, 3, 4})}, {"manifest.json", manifest}});
  const DatasetArchive a = read_archive(dir.file("z.zip"));
  EXPECT_EQ(a.tensors.at("v").data, (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(a.manifest["kind"], "x");
}

TEST(Archive, ReadRowsStreamsSlices) {
  TempDir dir;
  write_archive(dir.file("a.zip"), small_archive());
  ArchiveReader reader(dir.file("a.zip"));
  std::vector<float> rows(8);
  reader.read_rows("alpha", 1, 2, rows.data());
  const std::vector<float> full = small_archive().tensors.at("alpha").data;
  EXPECT_TRUE(std::equal(rows.begin(), rows.end(), full.begin() + 4));
  EXPECT_EQ(kind_of([&] { reader.read_rows("alpha", 2, 2, rows.data()); }), ArchiveError::Kind::shape);
  EXPECT_EQ(kind_of([&] { reader.read_tensor("gamma"); }), ArchiveError::Kind::shape);
}

TEST(Archive, TruncationIsReportedAsCorruption) {
  TempDir dir;
  write_archive(dir.file("a.zip"), small_archive());
  const std::string bytes = read_file(dir.file("a.zip"));
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.size() / 3, bytes.size() / 2, bytes.size() - 30,
                          bytes.size() - 1}) {
    write_file(dir.file("t.zip"), bytes.substr(0, cut));
    try {
      read_archive(dir.file("t.zip"));
      ADD_FAILURE() << "truncation at " << cut << " was not detected";
    } catch (const ArchiveError& e) {
      EXPECT_EQ(e.kind, ArchiveError::Kind::corrupt) << e.what();
    }
  }
}

TEST(Archive, TensorBitFlipFailsCrc) {
  TempDir dir;
  write_archive(dir.file("a.zip"), small_archive());
  std::string bytes = read_file(dir.file("a.zip"));
  const auto at = bytes.find(floats({1e30f, -7.5f, 3.0f}));
  ASSERT_NE(at, std::string::npos);
  bytes[at + 5] ^= 0x10;
  write_file(dir.file("a.zip"), bytes);
  ArchiveReader reader(dir.file("a.zip"));
  EXPECT_EQ(kind_of([&] { reader.read_tensor("beta"); }), ArchiveError::Kind::corrupt);
  EXPECT_NO_THROW(reader.read_tensor("alpha"));
}

TEST(Archive, VersionMismatch) {
  TempDir dir;
  write_zip(dir.file("v.zip"), {{"manifest.json", R"({"format_version":2,"tensors":{}})"}});
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("v.zip")); }), ArchiveError::Kind::version);
  write_zip(dir.file("n.zip"), {{"manifest.json", R"({"tensors":{}})"}});
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("n.zip")); }), ArchiveError::Kind::version);
}

TEST(Archive, ManifestShapeDisagreement) {
  TempDir dir;
  write_zip(dir.file("s.zip"), {{"v.f32", floats({1, 2, 3})},
                                {"manifest.json", R"({"format_version":1,"tensors":{"v":{"shape":[2,2]}}})"}});
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("s.zip")); }), ArchiveError::Kind::shape);
}

TEST(Archive, StructuralCorruption) {
  TempDir dir;
  write_zip(dir.file("m.zip"), {{"manifest.json", R"({"format_version":1,"tensors":{"v":{"shape":[1]}}})"}});
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("m.zip")); }), ArchiveError::Kind::corrupt);
  write_zip(dir.file("j.zip"), {{"manifest.json", "{not json"}});
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("j.zip")); }), ArchiveError::Kind::corrupt);
  write_zip(dir.file("none.zip"), {{"other.txt", "x"}});
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("none.zip")); }), ArchiveError::Kind::corrupt);
  write_zip(dir.file("c.zip"), {{"manifest.json", R"({"format_version":1,"tensors":{}})"}}, 8);
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("c.zip")); }), ArchiveError::Kind::corrupt);
  write_file(dir.file("text.zip"), std::string(200, 'x'));
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("text.zip")); }), ArchiveError::Kind::corrupt);
  EXPECT_EQ(kind_of([&] { read_archive(dir.file("missing.zip")); }), ArchiveError::Kind::io);
}

TEST(Archive, WriterRejectsInconsistentTensor) {
  TempDir dir;
  DatasetArchive a;
  a.tensors["bad"] = Tensor{{2, 3}, {1, 2, 3}};
  EXPECT_EQ(kind_of([&] { write_archive(dir.file("bad.zip"), a); }), ArchiveError::Kind::shape);
}

// 100k samples streamed in 4096-sample batches: live heap never exceeds twice
// what holding a single decoded batch costs.
TEST(Archive, LargeArchiveStreamsWithBoundedMemory) {
  TempDir dir;
  const std::int64_t n = 100000, j = 16;
  {
    DatasetArchive a;
    a.manifest = {{"kind", "dataset"},      {"dataset", "bulk"}, {"convention", "h36m"},
                  {"joint_set", "canonical16"}, {"counts", {{"samples", n}, {"train", n}, {"test", 0}}}};
    Tensor kp{{n, j, 2}, std::vector<float>(static_cast<std::size_t>(n * j * 2), 100.0f)};
    Tensor cam{{n, j, 3}, std::vector<float>(static_cast<std::size_t>(n * j * 3), 3000.0f)};
    Tensor intr{{n, 6}, {}};
    Tensor ext{{n, 12}, {}};
    Tensor meta{{n, 6}, {}};
    for (std::int64_t i = 0; i < n; ++i) {
      intr.data.insert(intr.data.end(), {1000, 1000, 500, 500, 1000, 1000});
      ext.data.insert(ext.data.end(), {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, -3000});
      meta.data.insert(meta.data.end(), {1, 0, 0, 0, static_cast<float>(i), 0});
    }
    a.tensors = {{"keypoints_2d", std::move(kp)}, {"joints_3d_cam", std::move(cam)}, {"camera_intrinsics", std::move(intr)},
                 {"camera_extrinsic", std::move(ext)}, {"meta", std::move(meta)}};
    write_archive(dir.file("big.zip"), a);
  }
  malloc_trim(0);

  ArchiveReader reader(dir.file("big.zip"));
  PoseStream stream(reader);
  std::vector<CanonicalPose> batch;
  const std::size_t base = live_heap();
  ASSERT_TRUE(stream.next(batch));
  const std::size_t one_batch = live_heap() - base;
  std::size_t peak = one_batch;
  std::int64_t seen = static_cast<std::int64_t>(batch.size());
  int last_frame = batch.back().frame_index;
  while (stream.next(batch)) {
    peak = std::max(peak, live_heap() - base);
    seen += static_cast<std::int64_t>(batch.size());
    EXPECT_EQ(batch.front().frame_index, last_frame + 1);
    last_frame = batch.back().frame_index;
  }
  EXPECT_EQ(seen, n);
  EXPECT_EQ(last_frame, n - 1);
  EXPECT_GT(one_batch, 0u);
  EXPECT_LT(peak, 2 * one_batch) << "one batch " << one_batch << " bytes, peak " << peak;
  // holding every sample would need roughly n / batch times more
  EXPECT_LT(peak * 10, static_cast<std::size_t>(n / 4096) * one_batch);
}
