#include "doctest.h"

#include "fwscope/fwkit.hpp"
#include "fwscope/queries.hpp"

using namespace fwscope;
using namespace fwscope::queries;
using symexec::Region;

namespace {

fwkit::Fixture fixture(fwkit::Template t, unsigned depth = 3) {
  fwkit::FixtureSpec spec;
  spec.kind = t;
  spec.guard_depth = depth;
  return fwkit::generate_fixture(spec);
}

std::set<Location> as_set(const std::vector<Location>& v) { return {v.begin(), v.end()}; }

const UsbConstraint* find_field(const std::vector<UsbConstraint>& v, const std::string& field) {
  for (const auto& u : v)
    if (u.field == field) return &u;
  return nullptr;
}

}  // namespace

TEST_CASE("usb constants") {
  CHECK(usb_constant_name("bRequest", 6) == "GET_DESCRIPTOR");
  CHECK(usb_constant_name("wValueH", 33) == "HID_DESCRIPTOR");
  CHECK(usb_constant_name("wValueH", 34) == "HID_REPORT_DESCRIPTOR");
  CHECK_FALSE(usb_constant_name("wValueH", 0x99));
}

TEST_CASE("precondition text form") {
  auto p = Precondition::parse("XRAM:0x7fe9:==:6");
  CHECK(p.location == Location{Region::Xram, 0x7fe9});
  CHECK(p.relation == Relation::Eq);
  CHECK(p.value == 6);
  CHECK(Precondition::parse(p.str()) == p);
  CHECK(Precondition::parse("IRAM:0x30:bit-set:3").relation == Relation::BitSet);
  for (const char* bad : {"XRAM:0x7fe9:==", "XRAM:0x7fe9:~:6", "SFR:0x90:==:1", "XRAM:0x7fe9:==:256",
                          "IRAM:0x30:bit-set:8", "CODE:0x10:==:1", "XRAM:zz:==:1", "XRAM:0x7fe9:==:6x"})
    CHECK_THROWS_AS(Precondition::parse(bad), std::invalid_argument);
}

TEST_CASE("precondition relations agree with byte semantics") {
  solver::Solver s;
  const Location l{Region::Xram, 0x10};
  const auto var = symexec::location_var(l.region, l.address);
  for (auto rel : {Relation::Eq, Relation::Ne, Relation::Lt, Relation::Gt, Relation::BitSet, Relation::BitClear}) {
    for (uint8_t c : {0, 3, 7, 200}) {
      if ((rel == Relation::BitSet || rel == Relation::BitClear) && c > 7) continue;
      const Precondition p{l, rel, c};
      solver::PathCondition pc;
      pc.add(p.expr());
      bool complete = false;
      auto vals = s.enumerate_values(pc, var, 300, &complete);
      REQUIRE(complete);
      std::set<uint32_t> got(vals.begin(), vals.end()), want;
      for (uint32_t x = 0; x < 256; ++x) {
        bool ok = false;
        switch (rel) {
          case Relation::Eq: ok = x == c; break;
          case Relation::Ne: ok = x != c; break;
          case Relation::Lt: ok = x < c; break;
          case Relation::Gt: ok = x > c; break;
          case Relation::BitSet: ok = (x >> c) & 1; break;
          case Relation::BitClear: ok = !((x >> c) & 1); break;
        }
        if (ok) want.insert(x);
      }
      CHECK(got == want);
    }
  }
}

TEST_CASE("apply_preconditions") {
  solver::Solver s;
  symexec::SymbolicPolicy pol;
  pol.add(Region::Xram, 0x7fe8, 8);
  auto st = symexec::ExecState::reset(std::make_shared<const symexec::SymbolicPolicy>(pol));

  apply_preconditions(st, {}, s);
  CHECK(st.path.empty());

  apply_preconditions(st, {Precondition::parse("XRAM:0x7fe9:==:6")}, s);
  REQUIRE(st.path.size() == 1);
  CHECK(st.path.constraints()[0].origin == "precondition");
  CHECK(solver::to_string(st.path.constraints()[0].expr) ==
        solver::to_string(Precondition::parse("XRAM:0x7fe9:==:6").expr()));

  auto before = st.path.size();
  CHECK_THROWS_AS(apply_preconditions(st, {Precondition::parse("XRAM:0x7fe9:==:7")}, s), UnsatisfiablePreconditions);
  CHECK(st.path.size() == before);
  CHECK_THROWS_AS(apply_preconditions(st, {Precondition::parse("XRAM:0x1000:==:7")}, s), std::invalid_argument);
}

TEST_CASE("symbolic locations converge to the guarded environment bytes") {
  for (unsigned k = 1; k <= 5; ++k) {
    CAPTURE(k);
    auto f = fixture(fwkit::Template::Branchy, k);
    lifter::Program prog(f.image);
    DiscoveryConfig cfg;
    auto set = find_symbolic_locations(prog, cfg);
    CHECK(set.locations == as_set(f.manifest.environment));
    size_t added = 0;
    for (const auto& s : set.log) added += s.added.has_value();
    CHECK(added == k);
    CHECK(set.log.size() == k + 1);  // the last run confirms the fixpoint

    // The symbolic set is what makes the target reachable.
    Query1Config q;
    q.source = PolicySource::Partial;
    q.symbolic = set.locations;
    auto hit = query1(prog, {*f.manifest.target}, q);
    CHECK(hit.target(*f.manifest.target)->reached);
    q.symbolic.clear();
    try {
      query1(prog, {*f.manifest.target}, q);
      FAIL("target reached with no symbolic bytes");
    } catch (const NoTargetsReached& e) {
      CHECK(e.report().coverage < hit.coverage);
    }
  }
}

TEST_CASE("bytes the ISR wrote itself are not symbolic") {
  auto a = fwkit::assemble(
      "      LJMP main\n"
      "      .org 0x0003\n"
      "      LJMP isr\n"
      "      .org 0x0030\n"
      "main: MOV SP,#0x5F\n"
      "      MOV IE,#0x81\n"
      "idle: SJMP idle\n"
      "isr:  MOV DPTR,#0x7000\n"
      "      MOV A,#0x05\n"
      "      MOVX @DPTR,A\n"
      "      MOVX A,@DPTR\n"
      "      MOV 0x40,A\n"
      "      MOV A,0x40\n"
      "      RETI\n");
  lifter::Program prog(a.image);
  auto set = find_symbolic_locations(prog, {});
  CHECK(set.locations.empty());
  for (const auto& s : set.log) CHECK_FALSE(s.added);
}

TEST_CASE("query 1 on the keyboard fixture finds the descriptor request") {
  auto f = fixture(fwkit::Template::BenignHid);
  lifter::Program prog(f.image);
  const uint16_t target = *f.manifest.descriptor_copy_site;
  Query1Config q;
  q.setup_fields = f.manifest.setup;
  q.source = PolicySource::Partial;
  q.symbolic = as_set(f.manifest.environment);
  auto rep = query1(prog, {target}, q);
  const auto* t = rep.target(target);
  REQUIRE(t);
  REQUIRE(t->reached);
  const auto* req = find_field(t->usb, "bRequest");
  const auto* valh = find_field(t->usb, "wValueH");
  REQUIRE(req);
  REQUIRE(valh);
  CHECK(req->value == 6);
  CHECK(req->meaning == "GET_DESCRIPTOR");
  CHECK(valh->value == 34);
  CHECK(valh->meaning == "HID_REPORT_DESCRIPTOR");
  CHECK_FALSE(t->path.empty());
  CHECK(t->model.at("XRAM[0x7fe9]") == 6);
  MESSAGE("partial states " << rep.states_created);

  Query1Config full;
  full.setup_fields = f.manifest.setup;
  auto rf = query1(prog, {target}, full);
  REQUIRE(rf.target(target)->reached);
  CHECK(find_field(rf.target(target)->usb, "wValueH")->value == 34);
  MESSAGE("full states " << rf.states_created);

  Query1Config pre = q;
  pre.preconditions = {Precondition::parse("XRAM:0x7fe9:==:6"), Precondition::parse("XRAM:0x7feb:==:0x22")};
  auto rp = query1(prog, {target}, pre);
  REQUIRE(rp.target(target)->reached);
  MESSAGE("partial+pre states " << rp.states_created);
  CHECK(rp.states_created * 2 <= rf.states_created);
}

TEST_CASE("query 1 rejects bad inputs") {
  auto f = fixture(fwkit::Template::Branchy, 1);
  lifter::Program prog(f.image);
  CHECK_THROWS_AS(query1(prog, {}, {}), std::invalid_argument);
  Query1Config q;
  q.source = PolicySource::Partial;
  q.preconditions = {Precondition::parse("XRAM:0x7fe9:==:6")};
  CHECK_THROWS_AS(query1(prog, {*f.manifest.target}, q), std::invalid_argument);
  q.symbolic = {{Region::Xram, 0x7fe9}};
  q.preconditions.push_back(Precondition::parse("XRAM:0x7fe9:!=:6"));
  CHECK_THROWS_AS(query1(prog, {*f.manifest.target}, q), UnsatisfiablePreconditions);
}

TEST_CASE("counters") {
  auto inj = fixture(fwkit::Template::InjectorHid);
  CHECK(find_counters(inj.image) == as_set(inj.manifest.counters));
  CHECK(find_counters(fixture(fwkit::Template::BenignHid).image).empty());
  CHECK(find_counters(fixture(fwkit::Template::StorageClaimingHid).image).empty());

  // Threshold loop on a direct byte.
  auto a = fwkit::assemble("loop: INC 0x40\nMOV A,0x40\nCJNE A,#0x10,loop\nh: SJMP h\n");
  CHECK(find_counters(a.image) == std::set<Location>{{Region::Iram, 0x40}});
  // The sum indexes a table, so it is not a counter.
  a = fwkit::assemble("MOV A,0x40\nADD A,#2\nMOV 0x40,A\nMOV DPTR,#0x100\nMOVC A,@A+DPTR\nh: SJMP h\n");
  CHECK(find_counters(a.image).empty());
  a = fwkit::assemble("MOV A,0x40\nADD A,#2\nMOV 0x40,A\nh: SJMP h\n");
  CHECK(find_counters(a.image) == std::set<Location>{{Region::Iram, 0x40}});
  // Read-modify-write of an XRAM byte.
  a = fwkit::assemble("MOV DPTR,#0x7010\nMOVX A,@DPTR\nINC A\nMOVX @DPTR,A\nh: SJMP h\n");
  CHECK(find_counters(a.image) == std::set<Location>{{Region::Xram, 0x7010}});
  // A constant stored after an increment is not a counter.
  a = fwkit::assemble("CLR A\nINC A\nMOV DPTR,#0x7010\nMOVX @DPTR,A\nh: SJMP h\n");
  CHECK(find_counters(a.image).empty());
}

TEST_CASE("other endpoint buffers") {
  auto eps = other_endpoints({0x7f00}, 4);
  CHECK(eps.size() == 10);  // 8k, 16k, 32k and 64k overlap
  CHECK(eps.count(0x7f40));
  CHECK(eps.count(0x7f08));
  CHECK(eps.count(0x7f00 + 4 * 64));
  CHECK_FALSE(eps.count(0x7f00));
  CHECK(other_endpoints({0x7f00}, 1) == std::set<uint16_t>{0x7f08, 0x7f10, 0x7f20, 0x7f40});
}

TEST_CASE("query 2 flags the injected keystrokes") {
  auto f = fixture(fwkit::Template::InjectorHid);
  lifter::Program prog(f.image);
  const auto prop = usbstatic::prop_const_mem(f.image);
  Query2Config cfg;
  cfg.symbolic = as_set(f.manifest.environment);
  cfg.counters = find_counters(f.image);
  cfg.exploration.time_limit_seconds = 60;
  cfg.exploration.max_states = 3000;

  auto u = query2_unexpected(prog, {*f.manifest.ep0}, prop, cfg);
  CHECK(u.targets.count(*f.manifest.malicious_site));
  CHECK(u.targets.count(*f.manifest.benign_site));
  REQUIRE(u.flags.size() == 1);
  CHECK(u.flags[0].site == *f.manifest.malicious_site);
  CHECK(u.flags[0].address == *f.manifest.malicious_address);
  CHECK(u.flags[0].values == std::set<uint8_t>(f.manifest.malicious_values.begin(), f.manifest.malicious_values.end()));
  MESSAGE("unexpected states " << u.states_created);

  auto i = query2_inconsistent(prog, cfg);
  REQUIRE_FALSE(i.ranking.empty());
  CHECK(i.ranking[0].address == *f.manifest.malicious_address);
  CHECK(i.ranking[0].rank == 1);
  CHECK(i.ranking[0].score >= 2);
  CHECK(i.rank1_count() == 1);
  MESSAGE("inconsistent states " << i.states_created);
}

TEST_CASE("query 2 on the benign twin stays quiet") {
  auto f = fixture(fwkit::Template::BenignHid);
  lifter::Program prog(f.image);
  const auto prop = usbstatic::prop_const_mem(f.image);
  Query2Config cfg;
  cfg.symbolic = as_set(f.manifest.environment);
  cfg.exploration.time_limit_seconds = 60;
  cfg.exploration.max_states = 3000;
  auto u = query2_unexpected(prog, {*f.manifest.ep0}, prop, cfg);
  CHECK(u.flags.empty());
  auto i = query2_inconsistent(prog, cfg);
  CHECK(i.rank1_count() == 0);
}

TEST_CASE("counter symbolication is needed for long thresholds") {
  fwkit::FixtureSpec spec;
  spec.kind = fwkit::Template::InjectorHid;
  spec.injection_threshold = 64;
  auto f = fwkit::generate_fixture(spec);
  lifter::Program prog(f.image);
  const auto prop = usbstatic::prop_const_mem(f.image);
  Query2Config cfg;
  cfg.symbolic = as_set(f.manifest.environment);
  cfg.exploration.loop_threshold = 32;
  cfg.exploration.time_limit_seconds = 60;
  cfg.exploration.max_states = 3000;
  auto without = query2_unexpected(prog, {*f.manifest.ep0}, prop, cfg);
  CHECK(without.flags.empty());
  cfg.counters = find_counters(f.image);
  auto with = query2_unexpected(prog, {*f.manifest.ep0}, prop, cfg);
  REQUIRE(with.flags.size() == 1);
  CHECK(with.flags[0].site == *f.manifest.malicious_site);
}

TEST_CASE("protocol constants are labeled, not suppressed") {
  auto f = fixture(fwkit::Template::StorageClaimingHid);
  lifter::Program prog(f.image);
  auto rep = usbstatic::analyze(f.image, "hid");
  Query2Config cfg;
  cfg.symbolic = as_set(f.manifest.environment);
  cfg.hits = rep.hits;
  cfg.exploration.time_limit_seconds = 60;
  cfg.exploration.max_states = 3000;
  auto u = query2_unexpected(prog, rep.ep0->ep0, rep.prop, cfg);
  REQUIRE(u.flags.size() == 1);
  CHECK(u.flags[0].address == f.manifest.endpoints[0]);
  CHECK(u.flags[0].label == "mass-storage protocol constant");
  CHECK(u.flags[0].values == std::set<uint8_t>{'U', 'S', 'B'});
}
