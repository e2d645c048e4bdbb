#include <filesystem>
#include <fstream>
#include <sstream>

#include "fwscope/report.hpp"

#ifndef FWSCOPE_VERSION
#define FWSCOPE_VERSION "0.0.0"
#endif

namespace fwscope::report {

using nlohmann::json;
using symexec::location_name;

namespace {

json hex_list(const auto& xs) {
  json a = json::array();
  for (auto x : xs) a.push_back(hex16(x));
  return a;
}

json locations(const std::set<symexec::Location>& ls) {
  json a = json::array();
  for (const auto& l : ls) a.push_back(location_name(l));
  return a;
}

std::string bytes_hex(std::span<const uint8_t> b) {
  std::string s;
  char buf[4];
  for (size_t i = 0; i < b.size(); ++i) {
    std::snprintf(buf, sizeof buf, i ? " %02x" : "%02x", b[i]);
    s += buf;
  }
  return s;
}

json hit_json(const usbstatic::DescriptorHit& h) {
  return {{"pattern", h.pattern},         {"role", usbstatic::role_name(h.role)}, {"class", h.usb_class},
          {"address", hex16(h.address)}, {"bytes", bytes_hex(h.bytes)},          {"xrefs", hex_list(h.xrefs)}};
}

json ep0_json(const usbstatic::Ep0Inference& e) {
  return {{"candidates_device", hex_list(e.cand_dd)}, {"candidates_config", hex_list(e.cand_cd)},
          {"candidates_function", hex_list(e.cand_func)}, {"config_destinations", hex_list(e.ep0_cd)},
          {"device_destinations", hex_list(e.ep0_dd)}, {"ep0", hex_list(e.ep0)},
          {"targets", hex_list(e.targets)}};
}

json diag_json(const std::vector<symexec::Diagnostic>& ds) {
  json a = json::array();
  for (const auto& d : ds) a.push_back({{"kind", d.kind}, {"address", hex16(d.address)}, {"detail", d.detail}});
  return a;
}

json query1_json(const queries::Query1Report& q, bool timings) {
  json targets = json::array();
  for (const auto& t : q.targets) {
    json path = json::array();
    for (const auto& c : t.path) path.push_back({{"expr", c.expr}, {"address", hex16(c.address)}, {"origin", c.origin}});
    json usb = json::array();
    for (const auto& u : t.usb)
      usb.push_back({{"location", location_name(u.location)}, {"field", u.field}, {"value", u.value},
                     {"meaning", u.meaning}});
    json j = {{"target", hex16(t.target)}, {"reached", t.reached}};
    if (t.reached) {
      j["states"] = t.states;
      j["coverage"] = t.coverage;
      j["path"] = path;
      j["path_digest"] = path_digest(t.path);
      j["model"] = t.model;
      j["usb_constraints"] = usb;
      if (timings) j["seconds"] = t.seconds;
    }
    targets.push_back(j);
  }
  return {{"policy", queries::policy_source_name(q.source)},
          {"targets", targets},
          {"states_created", q.states_created},
          {"blocks_executed", q.blocks_executed},
          {"coverage", q.coverage},
          {"termination", symexec::termination_name(q.termination)},
          {"diagnostics", diag_json(q.diagnostics)}};
}

json query2_json(const queries::Query2Report& q) {
  json flags = json::array();
  for (const auto& f : q.flags) {
    json values = json::array();
    for (auto v : f.values) values.push_back(v);
    flags.push_back({{"site", hex16(f.site)}, {"address", hex16(f.address)}, {"blocks", hex_list(f.blocks)},
                     {"values", values}, {"label", f.label}});
  }
  json ranking = json::array();
  for (const auto& r : q.ranking)
    ranking.push_back({{"address", hex16(r.address)}, {"score", r.score}, {"rank", r.rank}, {"sites", hex_list(r.sites)}});
  return {{"algorithm", q.algorithm},
          {"flags", flags},
          {"ranking", ranking},
          {"rank1", q.rank1_count()},
          {"counters", locations(q.counters)},
          {"watched_sites", hex_list(q.targets)},
          {"states_created", q.states_created},
          {"termination", symexec::termination_name(q.termination)}};
}

json device_json(const usbdb::DeviceDescriptor& d) {
  return {{"bcdUSB", hex16(d.bcdUSB)},          {"bDeviceClass", d.bDeviceClass},
          {"bDeviceSubClass", d.bDeviceSubClass}, {"bDeviceProtocol", d.bDeviceProtocol},
          {"bMaxPacketSize0", d.bMaxPacketSize0}, {"idVendor", hex16(d.idVendor)},
          {"idProduct", hex16(d.idProduct)},    {"bcdDevice", hex16(d.bcdDevice)},
          {"bNumConfigurations", d.bNumConfigurations}};
}

json endpoint_json(const usbdb::EndpointDescriptor& e) {
  return {{"address", e.bEndpointAddress},
          {"direction", e.is_in() ? "in" : "out"},
          {"transfer", usbdb::transfer_type_name(e.transfer_type())},
          {"max_packet", e.wMaxPacketSize},
          {"interval", e.bInterval}};
}

json config_json(const usbdb::ConfigurationDescriptor& c) {
  json ifs = json::array();
  for (const auto& i : c.interfaces) {
    json eps = json::array();
    for (const auto& e : i.endpoints) eps.push_back(endpoint_json(e));
    ifs.push_back({{"number", i.bInterfaceNumber},
                   {"alternate", i.bAlternateSetting},
                   {"class", i.bInterfaceClass},
                   {"subclass", i.bInterfaceSubClass},
                   {"protocol", i.bInterfaceProtocol},
                   {"endpoints", eps}});
  }
  return {{"wTotalLength", c.wTotalLength}, {"bNumInterfaces", c.bNumInterfaces},
          {"bConfigurationValue", c.bConfigurationValue}, {"bmAttributes", c.bmAttributes},
          {"bMaxPower", c.bMaxPower}, {"interfaces", ifs}};
}

json driver_json(const std::vector<usbdb::DriverMatch>& ds) {
  json a = json::array();
  for (const auto& d : ds) {
    json j = {{"rule", d.rule}, {"driver", d.driver}};
    j["interface"] = d.interface ? json(*d.interface) : json(nullptr);
    a.push_back(j);
  }
  return a;
}

json model_json(const usbdb::ClaimedModel& m) {
  json ifs = json::array();
  for (const auto& i : m.interfaces) {
    json j = {{"class", usbdb::class_name(i.usb_class)}, {"class_code", i.usb_class}, {"subclass", i.subclass},
              {"protocol", i.protocol}, {"confirmed", i.confirmed}, {"source", i.source}};
    j["target"] = i.target ? json(hex16(*i.target)) : json(nullptr);
    if (!i.path_digest.empty()) j["path_digest"] = i.path_digest;
    ifs.push_back(j);
  }
  json eps = json::array();
  for (const auto& e : m.endpoints) eps.push_back(endpoint_json(e));
  json j = {{"interfaces", ifs}, {"endpoints", eps}};
  j["device_class"] = m.device_class ? json(*m.device_class) : json(nullptr);
  j["device_protocol"] = m.device_protocol ? json(*m.device_protocol) : json(nullptr);
  return j;
}

json identity_json(const usbdb::IdentityVerdict& v) {
  json reasons = json::array();
  for (const auto& r : v.reasons) {
    json j = {{"class", usbdb::class_name(r.usb_class)}, {"path_digest", r.path_digest}, {"detail", r.detail}};
    j["target"] = r.target ? json(hex16(*r.target)) : json(nullptr);
    reasons.push_back(j);
  }
  return {{"anomalous", v.anomalous}, {"reasons", reasons}, {"notes", v.notes}};
}

}  // namespace

json RunConfig::to_json() const {
  json j = {{"image", image_path},
            {"expected", expected},
            {"query", query_selection_name(query)},
            {"policy", policy_mode_name(policy)},
            {"tau", tau},
            {"max_ep", max_ep},
            {"seed", seed},
            {"time_limit", time_limit},
            {"state_limit", state_limit},
            {"loop_threshold", loop_threshold},
            {"preconditions", preconditions},
            {"signatures", signatures_path},
            {"ruledb", ruledb_path}};
  j["setup_base"] = setup_base ? json(hex16(*setup_base)) : json(nullptr);
  return j;
}

json AnalysisReport::to_json() const {
  const bool t = config.timings;
  json j;
  j["tool"] = "fwscope";
  j["version"] = FWSCOPE_VERSION;
  j["schema"] = kSchemaVersion;
  j["config"] = config.to_json();
  j["image"] = {{"size", image_size}, {"fnv1a64", image_digest}};

  json hs = json::array();
  for (const auto& h : hits) hs.push_back(hit_json(h));
  j["descriptors"] = hs;
  j["ep0"] = ep0 ? ep0_json(*ep0) : json(nullptr);
  json ts = json::object();
  for (const auto& [cls, sites] : targets) ts[cls] = hex_list(sites);
  j["targets"] = ts;

  if (symbolic) {
    json log = json::array();
    for (const auto& s : symbolic->log) {
      json e = {{"isr", machine::interrupt_name(s.isr)}, {"iteration", s.iteration}, {"states", s.states}};
      e["added"] = s.added ? json(location_name(*s.added)) : json(nullptr);
      if (s.added) e["load_site"] = hex16(s.load_site);
      if (t) e["seconds"] = s.seconds;
      log.push_back(e);
    }
    j["symbolic_set"] = {{"locations", locations(symbolic->locations)}, {"log", log}};
  } else {
    j["symbolic_set"] = nullptr;
  }
  j["policy_used"] = policy_used;
  j["query1"] = query1 ? query1_json(*query1, t) : json(nullptr);
  json q2 = json::array();
  for (const auto& q : query2) q2.push_back(query2_json(q));
  j["query2"] = q2;
  j["counters"] = locations(counters);

  j["device_descriptor"] = device ? device_json(*device) : json(nullptr);
  j["configuration_descriptor"] = configuration ? config_json(*configuration) : json(nullptr);
  j["model"] = model_json(model);
  j["drivers"] = driver_json(model.drivers);
  j["identity"] = identity_json(identity);
  j["behavior_flagged"] = behavior_flagged;
  j["verdict"] = verdict_name(verdict);
  j["status"] = status;
  j["exit_code"] = exit_code();
  j["diagnostics"] = diagnostics;
  return j;
}

std::string AnalysisReport::dump() const { return to_json().dump(2) + "\n"; }

void emit_report(const AnalysisReport& report, const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty() && !std::filesystem::is_directory(dir))
    throw IoError("cannot write report " + path + ": directory " + dir.string() + " does not exist");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open report " + path + " for writing");
  f << report.dump();
  f.close();
  if (!f) throw IoError("error writing report " + path);
}

json load_report(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read report " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw IoError("report " + path + " is not valid: " + e.what());
  }
}

}  // namespace fwscope::report
