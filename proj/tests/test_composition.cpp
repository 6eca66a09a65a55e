#include <gtest/gtest.h>

#include <deque>
#include <random>
#include <vector>

#include "cdi/composition.hpp"
#include "support/oracles.hpp"

using namespace cdi;

namespace {

std::shared_ptr<const Topology> reference() { return std::make_shared<const Topology>(build_reference_topology()); }

std::shared_ptr<const Topology> small(std::vector<int> cabled = {0, 1, 2}) {
  return std::make_shared<const Topology>(build_topology(oracle::small_topology(std::move(cabled))));
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::schema_error;
}

const Principal alice{"alice", Role::user};
const Principal bob{"bob", Role::user};

}  // namespace

TEST(Composition, FreshStateUsesLocalGpusOnly) {
  Composition c(reference());
  EXPECT_EQ(c.revision(), 0u);
  EXPECT_TRUE(c.ownership().empty());
  EXPECT_EQ(c.job_gpus("host0").size(), 8u);
  EXPECT_EQ(c.mode("falcon0/d1"), DrawerMode::advanced);
  EXPECT_EQ(c.job_storage("host0").source, Composition::StorageSource::base);
}

TEST(Composition, AttachDetachRoundTrip) {
  auto t = reference();
  Composition c(t);
  auto a = attach(c, "host0", "falcon0/d1/gpu0", alice);
  EXPECT_EQ(a.owner("falcon0/d1/gpu0"), (Ownership{"host0", "alice"}));
  EXPECT_EQ(a.revision(), 1u);
  EXPECT_EQ(a.job_gpus("host0").back(), "falcon0/d1/gpu0");
  auto d = detach(a, "falcon0/d1/gpu0", alice);
  EXPECT_FALSE(d.owner("falcon0/d1/gpu0"));
  EXPECT_EQ(export_config(d), export_config(c));
  // The original value is untouched.
  EXPECT_TRUE(c.ownership().empty());
}

TEST(Composition, AttachErrorsInPrecedenceOrder) {
  auto t = reference();
  Composition c(t);
  EXPECT_EQ(code_of([&] { attach(c, "host0", "nope", alice); }), Errc::unknown_device);
  EXPECT_EQ(code_of([&] { attach(c, "host0", "host0/gpu0", alice); }), Errc::unknown_device);
  auto a = attach(c, "host0", "falcon0/d1/gpu0", alice);
  EXPECT_EQ(code_of([&] { attach(a, "host0", "falcon0/d1/gpu0", alice); }), Errc::already_owned);
  EXPECT_EQ(a.ownership().size(), 1u);
}

TEST(Composition, DetachErrors) {
  auto t = reference();
  Composition c(t);
  EXPECT_EQ(code_of([&] { detach(c, "falcon0/d1/gpu0", alice); }), Errc::not_owned);
  auto a = attach(c, "host0", "falcon0/d1/gpu0", alice);
  EXPECT_EQ(code_of([&] { detach(a, "falcon0/d1/gpu0", bob); }), Errc::forbidden);
  EXPECT_NO_THROW(detach(a, "falcon0/d1/gpu0", Principal::admin()));
}

TEST(Composition, NotConnectedHostIsRefused) {
  auto t = small({0, 1});
  Composition c(t);
  EXPECT_EQ(code_of([&] { attach(c, "hC", oracle::gpu_id(0), alice); }), Errc::not_connected);
}

TEST(Composition, StandardOneHostAdmitsASingleOwner) {
  auto t = small();
  auto c = set_drawer_mode(Composition(t), "f0/d1", DrawerMode::standard_1host);
  c = attach(c, "hA", oracle::gpu_id(0), alice);
  EXPECT_EQ(code_of([&] { attach(c, "hB", oracle::gpu_id(1), alice); }), Errc::host_limit);
}

TEST(Composition, StandardTwoHostSplitsByHalf) {
  auto t = small();
  auto c = set_drawer_mode(Composition(t), "f0/d1", DrawerMode::standard_2host);
  c = attach(c, "hA", oracle::gpu_id(0), alice);
  c = attach(c, "hB", oracle::gpu_id(4), alice);
  EXPECT_EQ(code_of([&] { attach(c, "hB", oracle::gpu_id(1), alice); }), Errc::mode_capacity);
  EXPECT_EQ(code_of([&] { attach(c, "hC", oracle::gpu_id(2), alice); }), Errc::mode_capacity);
}

TEST(Composition, ModeChangeThatBreaksOwnershipConflicts) {
  auto t = small();
  Composition c(t);
  c = attach(c, "hA", oracle::gpu_id(0), alice);
  c = attach(c, "hB", oracle::gpu_id(1), alice);
  EXPECT_EQ(code_of([&] { set_drawer_mode(c, "f0/d1", DrawerMode::standard_1host); }), Errc::mode_conflict);
  EXPECT_EQ(c.mode("f0/d1"), DrawerMode::advanced);
}

TEST(Composition, StandardTwoHostNeedsTwoConnections) {
  auto t = small({0});
  EXPECT_EQ(code_of([&] { set_drawer_mode(Composition(t), "f0/d1", DrawerMode::standard_2host); }),
            Errc::mode_conflict);
}

TEST(Composition, NamedConfigurationsMatchTheirDescriptions) {
  auto t = reference();
  auto count = [&](const Composition& c, bool pooled, bool gpu) {
    int n = 0;
    for (const auto& id : c.job_gpus("host0")) n += (t->device(id).pooled() == pooled && gpu);
    return n;
  };
  auto local = apply_named_configuration(t, "localGPUs");
  EXPECT_EQ(count(local, false, true), 8);
  EXPECT_EQ(count(local, true, true), 0);
  EXPECT_EQ(local.job_storage("host0").source, Composition::StorageSource::base);

  auto hybrid = apply_named_configuration(t, "hybridGPUs");
  EXPECT_EQ(count(hybrid, false, true), 4);
  EXPECT_EQ(count(hybrid, true, true), 4);
  for (const auto& id : hybrid.owned_by("host0")) EXPECT_EQ(t->device(id).location->drawer, "falcon0/d1");

  auto falcon = apply_named_configuration(t, "falconGPUs");
  EXPECT_EQ(count(falcon, false, true), 0);
  EXPECT_EQ(count(falcon, true, true), 8);

  auto lnvme = apply_named_configuration(t, "localNVMe");
  EXPECT_EQ(count(lnvme, false, true), 8);
  EXPECT_EQ(lnvme.job_storage("host0").source, Composition::StorageSource::local_nvme);

  auto fnvme = apply_named_configuration(t, "falconNVMe");
  EXPECT_EQ(count(fnvme, false, true), 8);
  EXPECT_EQ(fnvme.job_storage("host0").source, Composition::StorageSource::falcon_nvme);
  EXPECT_EQ(fnvme.owned_by("host0"), std::vector<std::string>{"falcon0/d2/nvme0"});

  for (const auto* label : kNamedConfigurations) EXPECT_TRUE(validate(apply_named_configuration(t, label)).empty());
  EXPECT_EQ(code_of([&] { apply_named_configuration(t, "bogus"); }), Errc::unknown_label);
}

TEST(Composition, FalconConfigNeedsEightPooledGpus) {
  auto t = small({0});
  EXPECT_EQ(code_of([&] { apply_named_configuration(t, "hybridGPUs", std::string("hA")); }),
            Errc::insufficient_resources);
}

TEST(Composition, ExportImportIsIdentity) {
  auto t = reference();
  for (const auto* label : kNamedConfigurations) {
    auto c = apply_named_configuration(t, label, std::nullopt, alice);
    auto text = export_config_text(c);
    auto back = import_config(t, json::parse(text));
    EXPECT_EQ(export_config_text(back), text) << label;
    EXPECT_EQ(back.ownership(), c.ownership());
    EXPECT_EQ(back.local_selection(), c.local_selection());
    EXPECT_EQ(back.modes(), c.modes());
  }
}

TEST(Composition, ImportIsPermissiveAndValidateReports) {
  auto t = small();
  auto c = import_config(t, oracle::state_document(DrawerMode::standard_1host, 0b1001));  // hA slot0, hB slot1
  auto v = validate(c);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "HOST_LIMIT");
  EXPECT_EQ(code_of([&] { import_config(t, json::parse(R"({"schema":1,"ownership":[{"device":"zzz","host":"hA"}]})")); }),
            Errc::unknown_device);
  EXPECT_EQ(code_of([&] { import_config(t, json::parse(R"({"schema":2})")); }), Errc::schema_error);
}

TEST(Composition, ImportedLinkOverrideChangesMetrics) {
  auto t = reference();
  auto doc = export_config(Composition(t));
  doc["link_classes"] = json::parse(R"([{"class":"F-F","protocol":"PCIE-GEN4","bandwidth_GBps":50,"latency_us":1}])");
  auto c = import_config(t, doc);
  ASSERT_TRUE(c.link_override());
  EXPECT_EQ(c.topology().metrics("falcon0/d1/gpu0", "falcon0/d1/gpu1").bandwidth_gbps, 50);
  EXPECT_EQ(import_config(t, export_config(c)).topology(), c.topology());
}

TEST(Composition, SelectLocalRejectsForeignDevices) {
  auto t = reference();
  EXPECT_EQ(code_of([&] { select_local(Composition(t), "host0", {"falcon0/d1/gpu0"}); }), Errc::unknown_device);
  auto c = select_local(Composition(t), "host0", {"host0/gpu1", "host0/gpu0"});
  EXPECT_EQ(c.job_gpus("host0"), (std::vector<std::string>{"host0/gpu0", "host0/gpu1"}));
}

// Exhaustive check on the small plant: validate() agrees with the oracle on
// every owner assignment, and attach/detach from the empty state reach
// exactly the legal assignments.
class SmallInstance : public ::testing::TestWithParam<DrawerMode> {};

TEST_P(SmallInstance, ValidateAgreesWithOracleOnEveryState) {
  auto mode = GetParam();
  for (auto cabled : std::vector<std::vector<int>>{{0, 1, 2}, {1, 0}, {2}}) {
    auto t = small(cabled);
    std::size_t disagreements = 0;
    for (std::uint32_t s = 0; s < oracle::kStates; ++s) {
      if (!oracle::valid_encoding(s)) continue;
      auto c = import_config(t, oracle::state_document(mode, s));
      bool engine = validate(c).empty();
      if (engine != oracle::legal(mode, s, cabled)) ++disagreements;
    }
    EXPECT_EQ(disagreements, 0u);
  }
}

TEST_P(SmallInstance, TransitionsReachExactlyTheLegalStates) {
  auto mode = GetParam();
  std::vector<int> cabled{0, 1, 2};
  auto t = small(cabled);
  Composition start = import_config(t, oracle::state_document(mode, 0));
  std::vector<bool> seen(oracle::kStates, false);
  std::deque<std::pair<std::uint32_t, Composition>> queue;
  queue.emplace_back(0, start);
  seen[0] = true;
  std::size_t wrong = 0;
  while (!queue.empty()) {
    auto [s, c] = std::move(queue.front());
    queue.pop_front();
    for (int slot = 0; slot < oracle::kSlots; ++slot) {
      int owner = oracle::owner_of(s, slot);
      if (owner >= 0) {
        auto next = detach(c, oracle::gpu_id(slot), Principal::admin());
        auto ns = oracle::with_owner(s, slot, -1);
        if (!seen[ns]) seen[ns] = true, queue.emplace_back(ns, std::move(next));
        continue;
      }
      for (int h = 0; h < oracle::kHosts; ++h) {
        auto ns = oracle::with_owner(s, slot, h);
        bool ok = true;
        std::optional<Composition> next;
        try {
          next = attach(c, oracle::kHostIds[h], oracle::gpu_id(slot), Principal::admin());
        } catch (const Error&) {
          ok = false;
        }
        if (ok != oracle::legal(mode, ns, cabled)) ++wrong;
        if (ok && !seen[ns]) seen[ns] = true, queue.emplace_back(ns, std::move(*next));
      }
    }
  }
  EXPECT_EQ(wrong, 0u);
  std::size_t mismatched = 0;
  for (std::uint32_t s = 0; s < oracle::kStates; ++s)
    if (oracle::valid_encoding(s) && seen[s] != oracle::legal(mode, s, cabled)) ++mismatched;
  EXPECT_EQ(mismatched, 0u);
}

INSTANTIATE_TEST_SUITE_P(AllModes, SmallInstance,
                         ::testing::Values(DrawerMode::standard_1host, DrawerMode::standard_2host,
                                           DrawerMode::advanced),
                         [](const auto& info) {
                           switch (info.param) {
                             case DrawerMode::standard_1host: return std::string("Standard1Host");
                             case DrawerMode::standard_2host: return std::string("Standard2Host");
                             default: return std::string("Advanced");
                           }
                         });

// Random walks never leave the legal set.
TEST(Composition, RandomWalksStayLegal) {
  std::mt19937 rng(20240611);
  auto t = small();
  for (auto mode : {DrawerMode::standard_1host, DrawerMode::standard_2host, DrawerMode::advanced}) {
    auto c = import_config(t, oracle::state_document(mode, 0));
    std::uniform_int_distribution<int> slot(0, 7), host(0, 2), coin(0, 3);
    for (int step = 0; step < 2000; ++step) {
      try {
        if (coin(rng) == 0) c = detach(c, oracle::gpu_id(slot(rng)), Principal::admin());
        else c = attach(c, oracle::kHostIds[host(rng)], oracle::gpu_id(slot(rng)), Principal::admin());
      } catch (const Error&) {
      }
      ASSERT_TRUE(validate(c).empty());
    }
  }
}
