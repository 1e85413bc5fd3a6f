// Copyright 2026 The HetSeg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "hetseg/raster.hpp"
#include "test_util.hpp"

namespace {

using hetseg::ClassRaster;
using hetseg::ProbRaster;
using hetseg::UidRaster;

std::string pgm_bytes(const ClassRaster& r) {
  std::ostringstream out;
  hetseg::write_pgm16(out, r);
  return out.str();
}

template <typename Read>
auto reread(const std::string& bytes, Read read) {
  std::istringstream in(bytes);
  return read(in);
}

ClassRaster read_pgm(const std::string& bytes) {
  return reread(bytes, [](std::istream& in) { return hetseg::read_pgm16(in); });
}

TEST(Pgm16, TwoByOneRoundTrip) {
  const ClassRaster r(2, 1, std::vector<std::uint16_t>{3, 7});
  const auto bytes = pgm_bytes(r);
  EXPECT_EQ(bytes, std::string("P5 2 1 65535\n\x00\x03\x00\x07", 17));
  EXPECT_EQ(read_pgm(bytes), r);
}

TEST(Pgm16, WrongMagic) {
  EXPECT_THROW(read_pgm("P6 1 1 255\n\x01"), hetseg::IoError);
}

TEST(Pgm16, EmptyRaster) {
  const ClassRaster r(0, 0);
  EXPECT_EQ(read_pgm(pgm_bytes(r)), r);
}

TEST(Pgm16, AcceptsCommentsAndByteSamples) {
  const auto r = read_pgm("P5\n# made elsewhere\n2 1\n255\n\x05\x09");
  EXPECT_EQ(r, ClassRaster(2, 1, std::vector<std::uint16_t>{5, 9}));
}

TEST(Pgm16, RejectsMalformed) {
  EXPECT_THROW(read_pgm("P5 2 1 65535\n\x00\x03"), hetseg::IoError);
  EXPECT_THROW(read_pgm("P5 1 1 65536\n\x00\x03"), hetseg::IoError);
  EXPECT_THROW(read_pgm("P5 1 1 255\n\x01\x02"), hetseg::IoError);
  EXPECT_THROW(read_pgm("P5 1 1 3\n\x07"), hetseg::IoError);
  EXPECT_THROW(read_pgm("P5 x 1 255\n\x01"), hetseg::IoError);
}

TEST(Uir32, PanopticPartsValueRoundTrips) {
  const UidRaster r(1, 1, std::vector<std::uint32_t>{2401002});
  std::ostringstream out;
  hetseg::write_uir32(out, r);
  std::istringstream in(out.str());
  EXPECT_EQ(hetseg::read_uir32(in), r);
}

TEST(Uir32, RangeErrorOnWrite) {
  const UidRaster r(1, 1, std::vector<std::uint32_t>{10'000'000});
  std::ostringstream out;
  EXPECT_THROW(hetseg::write_uir32(out, r), hetseg::ValidationError);
}

TEST(Uir32, PayloadLength) {
  const UidRaster r(3, 2, std::vector<std::uint32_t>{1, 2, 3, 4, 5, 6});
  std::ostringstream out;
  hetseg::write_uir32(out, r);
  const std::string header = "UIR1\n3 2\n";
  EXPECT_EQ(out.str().size(), header.size() + 24);
  EXPECT_EQ(out.str().substr(0, header.size()), header);
  std::istringstream in(out.str());
  EXPECT_EQ(hetseg::read_uir32(in), r);
}

TEST(Uir32, RejectsTruncationAndMagic) {
  std::istringstream truncated(std::string("UIR1\n1 1\n\x01\x00", 11));
  EXPECT_THROW(hetseg::read_uir32(truncated), hetseg::IoError);
  std::istringstream magic("UIR2\n0 0\n");
  EXPECT_THROW(hetseg::read_uir32(magic), hetseg::IoError);
}

TEST(Prb, RoundTrip) {
  ProbRaster r(1, 1, 2);
  r.data = {0.25, 0.75};
  std::ostringstream out;
  hetseg::write_prb(out, r);
  std::istringstream in(out.str());
  const auto load = hetseg::read_prb(in);
  EXPECT_EQ(load.raster, r);
  EXPECT_TRUE(load.warnings.empty());
}

TEST(Prb, WriterRejectsUnnormalized) {
  ProbRaster r(1, 1, 2);
  r.data = {0.6, 0.6};
  std::ostringstream out;
  EXPECT_THROW(hetseg::write_prb(out, r), hetseg::ValidationError);
}

TEST(Prb, ReaderWarnsOnUnnormalized) {
  std::string bytes = "PRB1\n1 1 2\n";
  for (double v : {0.6, 0.6}) {
    bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  std::istringstream in(bytes);
  const auto load = hetseg::read_prb(in);
  EXPECT_EQ(load.warnings.size(), 1u);
}

TEST(Prb, EmptyRoundTrips) {
  const ProbRaster r(0, 0, 3);
  std::ostringstream out;
  hetseg::write_prb(out, r);
  std::istringstream in(out.str());
  EXPECT_EQ(hetseg::read_prb(in).raster, r);
}

TEST(Formats, SniffAndPathIo) {
  const auto dir = testutil::scratch_dir("raster_formats");
  hetseg::write_pgm16(dir / "a.pgm", ClassRaster(2, 2, 1));
  hetseg::write_uir32(dir / "a.uir", UidRaster(2, 2, 1));
  ProbRaster p(1, 1, 1, 1.0);
  hetseg::write_prb(dir / "a.prb", p);
  EXPECT_EQ(hetseg::sniff_format(dir / "a.pgm"), hetseg::RasterFormat::kPgm16);
  EXPECT_EQ(hetseg::sniff_format(dir / "a.uir"), hetseg::RasterFormat::kUir32);
  EXPECT_EQ(hetseg::sniff_format(dir / "a.prb"), hetseg::RasterFormat::kPrb);
  EXPECT_THROW(hetseg::read_pgm16(dir / "missing.pgm"), hetseg::IoError);
}

TEST(RasterProperty, RandomRoundTrips) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t w = rng() % 9, h = rng() % 9;
    ClassRaster c(w, h);
    UidRaster u(w, h);
    for (auto& v : c.data) v = static_cast<std::uint16_t>(rng());
    for (auto& v : u.data) v = static_cast<std::uint32_t>(rng() % 10'000'000);
    const std::size_t ch = 1 + rng() % 5;
    ProbRaster p(w, h, ch);
    for (std::size_t i = 0; i < p.num_pixels(); ++i) {
      double total = 0;
      auto px = p.pixel(i);
      for (auto& v : px) total += v = std::uniform_real_distribution<>(0, 1)(rng);
      for (auto& v : px) v /= total;
    }
    const auto pb = pgm_bytes(c);
    EXPECT_EQ(read_pgm(pb), c);
    EXPECT_EQ(pgm_bytes(read_pgm(pb)), pb);

    std::ostringstream uo;
    hetseg::write_uir32(uo, u);
    std::istringstream ui(uo.str());
    EXPECT_EQ(hetseg::read_uir32(ui), u);

    std::ostringstream po;
    hetseg::write_prb(po, p);
    std::istringstream pi(po.str());
    const auto load = hetseg::read_prb(pi);
    EXPECT_EQ(load.raster, p);
    EXPECT_TRUE(load.warnings.empty());
  }
}

TEST(Confusion, SpecCases) {
  const ClassRaster all1(4, 1, 1);
  auto cm = hetseg::confusion_matrix(all1, all1, 3);
  EXPECT_EQ(cm.at(1, 1), 4u);
  EXPECT_EQ(cm.total(), 4u);

  cm = hetseg::confusion_matrix(ClassRaster(2, 1, std::vector<std::uint16_t>{0, 1}),
                                ClassRaster(2, 1, std::vector<std::uint16_t>{1, 1}),
                                2, {0});
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.total(), 1u);

  cm = hetseg::confusion_matrix(ClassRaster(1, 1, 2), ClassRaster(1, 1, 1), 3);
  EXPECT_EQ(cm.at(2, 1), 1u);
}

TEST(Confusion, Errors) {
  EXPECT_THROW(hetseg::confusion_matrix(ClassRaster(1, 1), ClassRaster(2, 1), 2),
               hetseg::ValidationError);
  EXPECT_THROW(hetseg::confusion_matrix(ClassRaster(1, 1, 5), ClassRaster(1, 1), 2),
               hetseg::ValidationError);
}

TEST(ConfusionProperty, TotalPlusIgnoredIsArea) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t w = 1 + rng() % 16, h = 1 + rng() % 16, labels = 1 + rng() % 6;
    ClassRaster gt(w, h), pred(w, h);
    for (auto& v : gt.data) v = static_cast<std::uint16_t>(rng() % labels);
    for (auto& v : pred.data) v = static_cast<std::uint16_t>(rng() % labels);
    const std::set<std::uint16_t> ignore{static_cast<std::uint16_t>(rng() % labels)};
    const auto cm = hetseg::confusion_matrix(gt, pred, labels, ignore);
    std::size_t ignored = 0;
    for (auto v : gt.data) ignored += ignore.count(v);
    EXPECT_EQ(cm.total() + ignored, w * h);

    // Accumulating the top and bottom halves separately gives the same matrix.
    const std::size_t top = h / 2;
    auto rows = [&](const ClassRaster& r, std::size_t y0, std::size_t y1) {
      return ClassRaster(w, y1 - y0,
                         std::vector<std::uint16_t>(r.data.begin() + y0 * w,
                                                    r.data.begin() + y1 * w));
    };
    auto merged = hetseg::confusion_matrix(rows(gt, 0, top), rows(pred, 0, top),
                                           labels, ignore);
    merged += hetseg::confusion_matrix(rows(gt, top, h), rows(pred, top, h),
                                       labels, ignore);
    EXPECT_EQ(merged, cm);
  }
}

}  // namespace
