#include <fstream>
#include <iterator>

#include "fwscope/lifter.hpp"
#include "fwscope/report.hpp"

#ifndef FWSCOPE_DATA_DIR
#define FWSCOPE_DATA_DIR "data"
#endif

namespace fwscope::report {

using namespace symexec;

namespace {

std::vector<uint8_t> read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read image " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("error reading image " + path);
  return bytes;
}

std::string fnv1a(std::span<const uint8_t> bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool budget_stop(Termination t) {
  return t == Termination::StateLimit || t == Termination::BlockLimit || t == Termination::TimeLimit;
}

std::map<std::string, Location> setup_fields(std::optional<uint16_t> base) {
  std::map<std::string, Location> m;
  if (!base) return m;
  static const char* names[] = {"bmRequestType", "bRequest", "wValueL", "wValueH",
                                "wIndexL",       "wIndexH",  "wLengthL", "wLengthH"};
  for (unsigned i = 0; i < 8; ++i) m[names[i]] = {Region::Xram, static_cast<uint32_t>(*base + i)};
  return m;
}

template <class D>
std::optional<D> first_parse(const std::vector<usbstatic::DescriptorHit>& hits, usbstatic::SignatureRole role,
                             std::span<const uint8_t> image, std::vector<std::string>& diags) {
  for (const auto& h : hits) {
    if (h.role != role) continue;
    try {
      auto d = usbdb::parse_descriptor(image, h.address);
      if (auto* p = std::get_if<D>(&d)) return *p;
    } catch (const usbdb::MalformedDescriptor& e) {
      diags.push_back(h.pattern + " at " + hex16(h.address) + ": " + e.what());
    }
  }
  return std::nullopt;
}

}  // namespace

std::string_view query_selection_name(QuerySelection q) {
  switch (q) {
    case QuerySelection::Identity: return "identity";
    case QuerySelection::Consistency: return "consistency";
    case QuerySelection::Both: return "both";
  }
  return "?";
}

std::optional<QuerySelection> query_selection_from_name(std::string_view s) {
  for (auto q : {QuerySelection::Identity, QuerySelection::Consistency, QuerySelection::Both})
    if (query_selection_name(q) == s) return q;
  return std::nullopt;
}

std::string_view policy_mode_name(PolicyMode p) {
  switch (p) {
    case PolicyMode::Full: return "full";
    case PolicyMode::Partial: return "partial";
    case PolicyMode::Auto: return "auto";
  }
  return "?";
}

std::optional<PolicyMode> policy_mode_from_name(std::string_view s) {
  for (auto p : {PolicyMode::Full, PolicyMode::Partial, PolicyMode::Auto})
    if (policy_mode_name(p) == s) return p;
  return std::nullopt;
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Consistent: return "consistent";
    case Verdict::Anomalous: return "anomalous";
    case Verdict::BehaviorFlagged: return "behavior-flagged";
    case Verdict::None: return "none";
  }
  return "?";
}

std::string hex16(uint32_t v) {
  char buf[12];
  std::snprintf(buf, sizeof buf, "0x%04x", v);
  return buf;
}

std::string path_digest(const std::vector<queries::PathConstraint>& path) {
  std::string all;
  for (const auto& c : path) all += c.expr + ";";
  return fnv1a({reinterpret_cast<const uint8_t*>(all.data()), all.size()});
}

void RunConfig::validate() const {
  if (image.empty() && image_path.empty()) throw ConfigInvalid("no image given");
  try {
    usbdb::expected_classes(expected);
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid(e.what());
  }
  if (tau == 0) throw ConfigInvalid("tau must be positive");
  if (max_ep == 0) throw ConfigInvalid("max-ep must be positive");
  if (!(time_limit > 0)) throw ConfigInvalid("time limit must be positive");
  if (state_limit == 0) throw ConfigInvalid("state limit must be positive");
  if (loop_threshold == 0) throw ConfigInvalid("loop threshold must be positive");
  for (const auto& p : preconditions) {
    try {
      queries::Precondition::parse(p);
    } catch (const std::invalid_argument& e) {
      throw ConfigInvalid("precondition '" + p + "': " + e.what());
    }
  }
}

int AnalysisReport::exit_code() const {
  if (verdict == Verdict::Anomalous || verdict == Verdict::BehaviorFlagged) return 1;
  if (!complete) return 2;
  return 0;
}

AnalysisReport run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  AnalysisReport rep;
  rep.config = cfg;
  auto image = cfg.image.empty() ? read_image(cfg.image_path) : cfg.image;
  if (image.size() > kMaxImageSize)
    throw ImageTooLarge("image is " + std::to_string(image.size()) + " bytes; the code space holds 65536");
  if (image.empty()) throw ConfigInvalid("image is empty");
  rep.image_size = image.size();
  rep.image_digest = fnv1a(image);

  std::vector<usbstatic::SignaturePattern> sigs;
  try {
    sigs = cfg.signatures_path.empty() ? usbstatic::default_signatures()
                                       : usbstatic::load_signatures(cfg.signatures_path);
  } catch (const std::exception& e) {
    throw ConfigInvalid(std::string("signatures: ") + e.what());
  }
  usbdb::RuleDb db;
  const std::string dbpath = cfg.ruledb_path.empty() ? FWSCOPE_DATA_DIR "/usbdb.rules" : cfg.ruledb_path;
  try {
    db = usbdb::RuleDb::load(dbpath);
  } catch (const std::exception& e) {
    if (!cfg.ruledb_path.empty()) throw ConfigInvalid(std::string("rule database: ") + e.what());
    rep.diagnostics.push_back(std::string("rule database unavailable: ") + e.what());
  }
  std::vector<queries::Precondition> pre;
  std::set<Location> pre_locs;
  for (const auto& p : cfg.preconditions) {
    pre.push_back(queries::Precondition::parse(p));
    pre_locs.insert(pre.back().location);
  }

  ExplorationConfig ec;
  ec.seed = cfg.seed;
  ec.max_states = cfg.state_limit;
  ec.loop_threshold = cfg.loop_threshold;
  ec.time_limit_seconds = cfg.time_limit;

  // Signature scan, XREFs, constant propagation and EP0 inference.
  auto st = usbstatic::analyze(image, "hid", sigs);
  rep.hits = st.hits;
  std::set<std::string> classes;
  for (const auto& h : st.hits)
    if (h.role == usbstatic::SignatureRole::Function) classes.insert(h.usb_class);
  try {
    usbstatic::Ep0Inference all;
    for (const auto& cls : classes.empty() ? std::set<std::string>{"hid"} : classes) {
      auto inf = usbstatic::find_devspec_to_ep0(st.hits, st.prop, cls);
      if (!classes.empty()) rep.targets[cls] = inf.targets;
      all.cand_dd = inf.cand_dd;
      all.cand_cd = inf.cand_cd;
      all.ep0_cd = inf.ep0_cd;
      all.ep0_dd = inf.ep0_dd;
      all.ep0 = inf.ep0;
      all.cand_func.insert(inf.cand_func.begin(), inf.cand_func.end());
      all.targets.insert(all.targets.end(), inf.targets.begin(), inf.targets.end());
    }
    std::sort(all.targets.begin(), all.targets.end());
    if (all.ep0.empty()) all.diagnostics.push_back("device and configuration descriptors are not copied to a common buffer");
    if (classes.empty()) all.diagnostics.push_back("no function-specific descriptor pattern found");
    rep.diagnostics.insert(rep.diagnostics.end(), all.diagnostics.begin(), all.diagnostics.end());
    rep.ep0 = std::move(all);
  } catch (const usbstatic::NoDescriptors& e) {
    rep.diagnostics.push_back(std::string("NoDescriptors: ") + e.what());
  }

  std::set<uint16_t> targets;
  for (const auto& [cls, ts] : rep.targets) targets.insert(ts.begin(), ts.end());
  if (rep.ep0 && targets.empty()) rep.diagnostics.push_back("no function-specific descriptor copy reaches EP0");

  lifter::Program program(image);
  const bool want_identity = cfg.query != QuerySelection::Consistency;
  const bool want_consistency = cfg.query != QuerySelection::Identity;

  // Symbolic locations for the partial policy.
  std::set<Location> symbolic = pre_locs;
  if (cfg.policy != PolicyMode::Full && (want_consistency || !targets.empty())) {
    queries::DiscoveryConfig dc;
    dc.tau = cfg.tau;
    dc.exploration = ec;
    rep.symbolic = queries::find_symbolic_locations(program, dc, pre_locs);
    symbolic = rep.symbolic->locations;
  }
  rep.policy_used = std::string(policy_mode_name(cfg.policy == PolicyMode::Full ? PolicyMode::Full : PolicyMode::Partial));

  // Reachability of function-specific descriptor copies.
  if (want_identity && !targets.empty()) {
    queries::Query1Config q;
    q.source = cfg.policy == PolicyMode::Full ? queries::PolicySource::Full : queries::PolicySource::Partial;
    q.symbolic = symbolic;
    q.preconditions = pre;
    q.setup_fields = setup_fields(cfg.setup_base);
    q.exploration = ec;
    auto run = [&]() -> queries::Query1Report {
      try {
        return queries::query1(program, targets, q);
      } catch (const queries::NoTargetsReached& e) {
        return e.report();
      } catch (const queries::UnsatisfiablePreconditions& e) {
        throw ConfigInvalid(e.what());
      }
    };
    rep.query1 = run();
    if (!rep.query1->any_reached() && cfg.policy == PolicyMode::Auto) {
      rep.diagnostics.push_back("partial policy reached no target; retried with the full policy");
      q.source = queries::PolicySource::Full;
      rep.query1 = run();
      rep.policy_used = "full";
    }
    if (!rep.query1->any_reached()) {
      rep.diagnostics.push_back("no function-specific target reached");
      if (budget_stop(rep.query1->termination)) rep.complete = false;
    }
  }

  // Claimed model and rule-database comparison.
  rep.device = first_parse<usbdb::DeviceDescriptor>(st.hits, usbstatic::SignatureRole::Device, image, rep.diagnostics);
  rep.configuration =
      first_parse<usbdb::ConfigurationDescriptor>(st.hits, usbstatic::SignatureRole::Config, image, rep.diagnostics);
  std::vector<usbdb::Evidence> evidence;
  for (const auto& [cls, ts] : rep.targets) {
    std::string sig;
    for (const auto& h : st.hits)
      if (h.role == usbstatic::SignatureRole::Function && h.usb_class == cls) sig = h.pattern;
    for (auto t : ts) {
      usbdb::Evidence e{cls, sig, t, false, {}};
      if (rep.query1)
        if (const auto* r = rep.query1->target(t); r && r->reached) {
          e.reached = true;
          e.path_digest = path_digest(r->path);
        }
      evidence.push_back(std::move(e));
    }
  }
  rep.model = usbdb::build_claimed_model(rep.device, rep.configuration, evidence, db);
  rep.identity = usbdb::compare_models(rep.model, cfg.expected);

  // Endpoint data-flow consistency.
  if (want_consistency) {
    queries::Query2Config q;
    q.max_ep = cfg.max_ep;
    q.symbolic = symbolic;
    q.counters = queries::find_counters(image);
    q.full_policy = cfg.policy == PolicyMode::Full;
    q.exploration = ec;
    q.hits = st.hits;
    rep.counters = q.counters;
    if (rep.ep0 && !rep.ep0->ep0.empty())
      rep.query2.push_back(queries::query2_unexpected(program, rep.ep0->ep0, st.prop, q));
    else
      rep.diagnostics.push_back("EP0 unknown; unexpected-endpoint check skipped");
    rep.query2.push_back(queries::query2_inconsistent(program, q));
    for (const auto& r : rep.query2)
      if (r.rank1_count() > 0) rep.behavior_flagged = true;
  }

  if (rep.identity.anomalous)
    rep.verdict = Verdict::Anomalous;
  else if (rep.behavior_flagged)
    rep.verdict = Verdict::BehaviorFlagged;
  else if (rep.model.empty())
    rep.verdict = Verdict::None;
  else
    rep.verdict = Verdict::Consistent;

  if (!rep.complete)
    rep.status = "incomplete";
  else if (rep.verdict == Verdict::None)
    rep.status = "completed-with-findings-none";
  else
    rep.status = "completed";
  return rep;
}

}  // namespace fwscope::report
