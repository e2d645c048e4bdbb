#include <cstdarg>
#include <cstdio>

#include "fwscope/fwkit.hpp"

namespace fwscope::fwkit {

using nlohmann::json;
using symexec::Location;
using ir::Region;

namespace {

class Source {
 public:
  void operator()(const char* fmt, ...) __attribute__((format(printf, 2, 3))) {
    char buf[256];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    text_ += buf;
    text_ += '\n';
  }
  void bytes(const std::vector<uint8_t>& b) {
    for (size_t i = 0; i < b.size(); i += 12) {
      std::string l = "        .db ";
      for (size_t j = i; j < b.size() && j < i + 12; ++j) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "%s0x%02X", j == i ? "" : ",", b[j]);
        l += buf;
      }
      text_ += l + '\n';
    }
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

std::string hex16(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%04x", v);
  return buf;
}

uint16_t parse_hex(const json& j) {
  if (j.is_number()) return j.get<uint16_t>();
  return static_cast<uint16_t>(std::stoul(j.get<std::string>(), nullptr, 0));
}

// Boot-protocol keyboard report descriptor, 63 bytes.
const std::vector<uint8_t> kKeyboardReport = {
    0x05, 0x01, 0x09, 0x06, 0xA1, 0x01, 0x05, 0x07, 0x19, 0xE0, 0x29, 0xE7, 0x15, 0x00, 0x25, 0x01,
    0x75, 0x01, 0x95, 0x08, 0x81, 0x02, 0x95, 0x01, 0x75, 0x08, 0x81, 0x01, 0x95, 0x05, 0x75, 0x01,
    0x05, 0x08, 0x19, 0x01, 0x29, 0x05, 0x91, 0x02, 0x95, 0x01, 0x75, 0x03, 0x91, 0x01, 0x95, 0x06,
    0x75, 0x08, 0x15, 0x00, 0x25, 0x65, 0x05, 0x07, 0x19, 0x00, 0x29, 0x65, 0x81, 0x00, 0xC0};

void vectors(Source& s, const char* ext0, const char* timer2) {
  s("        .org 0x0000");
  s("        LJMP main");
  s("        .org 0x0003");
  s("        LJMP %s", ext0);
  for (const char* v : {"0x000B", "0x0013", "0x001B", "0x0023"}) {
    s("        .org %s", v);
    s("        RETI");
  }
  s("        .org 0x002B");
  if (timer2) s("        LJMP %s", timer2);
  else s("        RETI");
}

// Descriptor copy loop in the shape compilers emit for table reads: the
// DPTR load sits three bytes in, after the index setup.
void copy_routine(Source& s, const std::string& name, uint32_t at, const std::string& desc, uint32_t len,
                  const std::string& fifo, const std::string& count_reg) {
  s("        .org 0x%04X", at);
  s("%s:", name.c_str());
  s("        MOV R7,#0");
  s("%s_loop:", name.c_str());
  s("        MOV A,R7");
  s("%s_ref: MOV DPTR,#%s", name.c_str(), desc.c_str());
  s("        MOVC A,@A+DPTR");
  s("        MOV DPTR,#%s", fifo.c_str());
  s("%s_st: MOVX @DPTR,A", name.c_str());
  s("        INC R7");
  s("        CJNE R7,#%u,%s_loop", len, name.c_str());
  s("        MOV DPTR,#%s", count_reg.c_str());
  s("        MOV A,#%u", len);
  s("        MOVX @DPTR,A");
  s("        RET");
}

void isr_prologue(Source& s) {
  s("        PUSH ACC");
  s("        PUSH DPL");
  s("        PUSH DPH");
  s("        PUSH PSW");
  s("        PUSH 0x07");
}

void isr_epilogue(Source& s) {
  s("        POP 0x07");
  s("        POP PSW");
  s("        POP DPH");
  s("        POP DPL");
  s("        POP ACC");
  s("        RETI");
}

Location xram(uint16_t a) { return {Region::Xram, a}; }
Location iram(uint16_t a) { return {Region::Iram, a}; }

// Keyboard firmware modeled on the EZ-USB memory map: setup packet at
// 0x7fe8, endpoint buffers and control registers in the 0x7fxx page.
Fixture ezhid(const FixtureSpec& spec, bool injector) {
  const uint16_t ep0 = spec.ep0.value_or(0x7f00);
  const uint16_t ep1 = static_cast<uint16_t>(ep0 + 0x40);
  const uint16_t cfg_buf = spec.split_ep0 ? static_cast<uint16_t>(ep0 + 0x80) : ep0;
  if (spec.injection_threshold == 0 || spec.injection_threshold > 64)
    throw std::invalid_argument("injection threshold must be in 1..64");
  if (spec.scancodes.empty() || spec.scancodes.size() > 8)
    throw std::invalid_argument("injector needs 1..8 scancodes");

  Source s;
  s("; keyboard firmware, EZ-USB style memory map");
  s("        .equ EP0BUF, 0x%04X", ep0);
  s("        .equ CFGBUF, 0x%04X", cfg_buf);
  s("        .equ EP1BUF, 0x%04X", ep1);
  s("        .equ EP0CS, 0x7FB4");
  s("        .equ IN0BC, 0x7FB5");
  s("        .equ IN1CS, 0x7FB6");
  s("        .equ IN1BC, 0x7FB7");
  s("        .equ USBIRQ, 0x7FAB");
  s("        .equ SETUP_TYPE, 0x7FE8");
  s("        .equ SETUP_REQ, 0x7FE9");
  s("        .equ SETUP_VALL, 0x7FEA");
  s("        .equ SETUP_VALH, 0x7FEB");
  s("        .equ SETUP_IDXL, 0x7FEC");
  s("        .equ KBD_DATA, 0x7F9A");
  s("        .equ KBD_STAT, 0x7F9B");
  s("        .equ INJ_COUNT, 0x30");
  s("        .equ INJ_START, 0x31");
  vectors(s, "usb_isr", "kbd_isr");

  s("        .org 0x0030");
  s("main:   MOV SP,#0x5F");
  if (injector) {
    s("        MOV INJ_COUNT,#0");
    s("        MOV INJ_START,#0");
  }
  s("        MOV IE,#0xA1");
  s("idle:   SJMP idle");

  s("        .org 0x0040");
  s("usb_isr:");
  isr_prologue(s);
  s("        MOV DPTR,#USBIRQ");
  s("        MOVX A,@DPTR");
  s("        JNB ACC.0,usb_done");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("        LCALL setup");
  s("usb_done:");
  isr_epilogue(s);

  copy_routine(s, "copy_dev", 0x0188, "dev_desc", 18, "EP0BUF", "IN0BC");
  copy_routine(s, "copy_cfg", 0x01A1, "cfg_desc", 34, "CFGBUF", "IN0BC");
  copy_routine(s, "copy_hidd", 0x01C0, "hid_class", 9, "EP0BUF", "IN0BC");
  copy_routine(s, "copy_str0", 0x01E0, "str0", 4, "EP0BUF", "IN0BC");
  copy_routine(s, "copy_report", 0x024D, "report_desc", static_cast<uint32_t>(kKeyboardReport.size()),
               "EP0BUF", "IN0BC");

  s("        .org 0x0280");
  s("setup:  MOV DPTR,#SETUP_REQ");
  s("        MOVX A,@DPTR");
  s("        JZ get_status");
  s("        CJNE A,#0x01,sr_1");
  s("        LJMP clear_feature");
  s("sr_1:   CJNE A,#0x03,sr_3");
  s("        LJMP set_feature");
  s("sr_3:   CJNE A,#0x06,sr_6");
  s("        LJMP get_descriptor");
  s("sr_6:   CJNE A,#0x08,sr_8");
  s("        LJMP get_configuration");
  s("sr_8:   CJNE A,#0x09,sr_9");
  s("        LJMP set_configuration");
  s("sr_9:   CJNE A,#0x0A,sr_10");
  s("        LJMP get_interface");
  s("sr_10:  CJNE A,#0x0B,stall");
  s("        LJMP set_interface");
  s("stall:  MOV DPTR,#EP0CS");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("        RET");
  s("ack:    MOV DPTR,#EP0CS");
  s("        MOV A,#0x02");
  s("        MOVX @DPTR,A");
  s("        RET");

  s("get_status:");
  s("        MOV DPTR,#SETUP_TYPE");
  s("        MOVX A,@DPTR");
  s("        ANL A,#0x1F");
  s("        JZ gs_device");
  s("        CJNE A,#0x01,gs_ep");
  s("        SJMP gs_zero");
  s("gs_ep:  CJNE A,#0x02,stall");
  s("        MOV DPTR,#SETUP_IDXL");
  s("        MOVX A,@DPTR");
  s("        ANL A,#0x7F");
  s("        JZ gs_zero");
  s("        CJNE A,#0x01,stall");
  s("        SJMP gs_zero");
  s("gs_device:");
  s("        MOV DPTR,#EP0BUF");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("        SJMP gs_len");
  s("gs_zero:");
  s("        MOV DPTR,#EP0BUF");
  s("        CLR A");
  s("        MOVX @DPTR,A");
  s("gs_len: MOV DPTR,#IN0BC");
  s("        MOV A,#0x02");
  s("        MOVX @DPTR,A");
  s("        LJMP ack");

  s("clear_feature:");
  s("        MOV DPTR,#SETUP_VALL");
  s("        MOVX A,@DPTR");
  s("        JNZ cf_stall");
  s("        MOV DPTR,#SETUP_IDXL");
  s("        MOVX A,@DPTR");
  s("        CJNE A,#0x81,cf_stall");
  s("        MOV DPTR,#IN1CS");
  s("        CLR A");
  s("        MOVX @DPTR,A");
  s("        LJMP ack");
  s("cf_stall:");
  s("        LJMP stall");

  s("set_feature:");
  s("        MOV DPTR,#SETUP_VALL");
  s("        MOVX A,@DPTR");
  s("        CJNE A,#0x01,sf_halt");
  s("        LJMP ack");
  s("sf_halt:");
  s("        JNZ cf_stall");
  s("        MOV DPTR,#IN1CS");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("        LJMP ack");

  s("get_configuration:");
  s("        MOV DPTR,#EP0BUF");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("        MOV DPTR,#IN0BC");
  s("        MOVX @DPTR,A");
  s("        LJMP ack");

  s("set_configuration:");
  s("        MOV DPTR,#SETUP_VALL");
  s("        MOVX A,@DPTR");
  s("        JZ sc_ok");
  s("        CJNE A,#0x01,cf_stall");
  s("sc_ok:  LJMP ack");

  s("get_interface:");
  s("        MOV DPTR,#SETUP_IDXL");
  s("        MOVX A,@DPTR");
  s("        JNZ cf_stall");
  s("        MOV DPTR,#EP0BUF");
  s("        CLR A");
  s("        MOVX @DPTR,A");
  s("        MOV DPTR,#IN0BC");
  s("        INC A");
  s("        MOVX @DPTR,A");
  s("        LJMP ack");

  s("set_interface:");
  s("        MOV DPTR,#SETUP_VALL");
  s("        MOVX A,@DPTR");
  s("        JNZ cf_stall");
  s("        LJMP ack");

  s("get_descriptor:");
  s("        MOV DPTR,#SETUP_VALH");
  s("        MOVX A,@DPTR");
  s("        CJNE A,#0x01,gd_1");
  s("        LCALL copy_dev");
  s("        LJMP ack");
  s("gd_1:   CJNE A,#0x02,gd_2");
  s("        LCALL copy_cfg");
  s("        LJMP ack");
  s("gd_2:   CJNE A,#0x03,gd_3");
  s("        MOV DPTR,#SETUP_VALL");
  s("        MOVX A,@DPTR");
  s("        JNZ gd_stall");
  s("        LCALL copy_str0");
  s("        LJMP ack");
  s("gd_3:   CJNE A,#0x21,gd_4");
  s("        LCALL copy_hidd");
  s("        LJMP ack");
  s("gd_4:   CJNE A,#0x22,gd_stall");
  s("        MOV DPTR,#SETUP_IDXL");
  s("        MOVX A,@DPTR");
  s("        JNZ gd_stall");
  s("        LCALL copy_report");
  s("        LJMP ack");
  s("gd_stall:");
  s("        LJMP stall");

  s("        .org 0x0400");
  s("kbd_isr:");
  isr_prologue(s);
  s("        CLR TF2");
  if (injector) {
    s("        MOV A,INJ_START");
    s("        JNZ inj_go");
    s("        INC INJ_COUNT");
    s("        MOV A,INJ_COUNT");
    s("        CLR C");
    s("        SUBB A,#%u", spec.injection_threshold + 1);
    s("        JC inj_go");
    s("        MOV INJ_START,#0x01");
    s("inj_go: MOV A,INJ_START");
    s("        JZ kbd_check");
    s("        MOV DPTR,#IN1CS");
    s("        MOVX A,@DPTR");
    s("        JB ACC.1,kbd_check");
    s("        MOV R7,#0");
    s("inj_loop:");
    s("        MOV A,R7");
    s("        MOV DPTR,#key_script");
    s("        MOVC A,@A+DPTR");
    s("        MOV DPTR,#EP1BUF");
    s("inj_st: MOVX @DPTR,A");
    s("        INC R7");
    s("        CJNE R7,#%zu,inj_loop", spec.scancodes.size());
    s("        MOV DPTR,#IN1BC");
    s("        MOV A,#%zu", spec.scancodes.size());
    s("        MOVX @DPTR,A");
    s("        MOV INJ_START,#0x00");
  }
  s("kbd_check:");
  s("        MOV DPTR,#KBD_STAT");
  s("        MOVX A,@DPTR");
  s("        JZ kbd_done");
  s("        MOV DPTR,#IN1CS");
  s("        MOVX A,@DPTR");
  s("        JB ACC.1,kbd_done");
  s("        MOV DPTR,#KBD_DATA");
  s("        MOVX A,@DPTR");
  s("        MOV DPTR,#EP1BUF");
  s("kbd_st: MOVX @DPTR,A");
  s("        MOV DPTR,#IN1BC");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("kbd_done:");
  isr_epilogue(s);

  s("        .org 0x0B8A");
  s("dev_desc:");
  s.bytes({0x12, 0x01, 0x00, 0x01, 0x00, 0x00, 0x00, 0x40, 0x47, 0x05, 0x10, 0x20, 0x01, 0x00, 0x01, 0x02,
           0x00, 0x01});
  s("cfg_desc:");
  s.bytes({0x09, 0x02, 0x22, 0x00, 0x01, 0x01, 0x00, 0xA0, 0x32});
  s.bytes({0x09, 0x04, 0x00, 0x00, 0x01, 0x03, 0x01, 0x01, 0x00});
  s("hid_class:");
  s.bytes({0x09, 0x21, 0x10, 0x01, 0x00, 0x01, 0x22, static_cast<uint8_t>(kKeyboardReport.size()), 0x00});
  s.bytes({0x07, 0x05, 0x81, 0x03, 0x08, 0x00, 0x0A});
  s("report_desc:");
  s.bytes(kKeyboardReport);
  s("str0:");
  s.bytes({0x04, 0x03, 0x09, 0x04});
  s("key_script:");
  s.bytes(injector ? spec.scancodes : std::vector<uint8_t>{0x00});

  Fixture f;
  f.source = s.text();
  const Assembly a = assemble(f.source);
  f.image = a.image;
  Manifest& m = f.manifest;
  m.template_name = std::string(template_name(injector ? Template::InjectorHid : Template::BenignHid));
  m.expected_class = "hid";
  m.descriptors = {{"DEVICE_DESC", a.at("dev_desc")}, {"CONFIG_DESC", a.at("cfg_desc")},
                   {"HID_REPORT", a.at("report_desc")}};
  m.xrefs = {{"DEVICE_DESC", {a.at("copy_dev_ref")}}, {"CONFIG_DESC", {a.at("copy_cfg_ref")}},
             {"HID_REPORT", {a.at("copy_report_ref")}}};
  m.ep0 = ep0;
  m.endpoints = {ep1};
  m.query1_targets = {a.at("copy_report_st")};
  m.descriptor_copy_site = a.at("copy_report_st");
  m.copy_sites = {a.at("copy_dev_st"), a.at("copy_cfg_st"), a.at("copy_report_st")};
  if (injector) {
    m.counters = {iram(0x30)};
    m.malicious_site = a.at("inj_st");
    m.malicious_address = ep1;
    m.malicious_values = spec.scancodes;
  }
  m.benign_site = a.at("kbd_st");
  m.environment = {xram(0x7fab), xram(0x7fe8), xram(0x7fe9), xram(0x7fea), xram(0x7feb), xram(0x7fec),
                   xram(0x7f9a), xram(0x7f9b), xram(0x7fb6)};
  m.setup = {{"bmRequestType", xram(0x7fe8)}, {"bRequest", xram(0x7fe9)}, {"wValueL", xram(0x7fea)},
             {"wValueH", xram(0x7feb)}, {"wIndexL", xram(0x7fec)}, {"irq", xram(0x7fab)}};
  m.instruction_count = a.instructions.size();
  return f;
}

// Storage controller in the style of Phison parts: EP0 is a FIFO register
// in the 0xf1xx page, setup bytes are copied into IRAM and dispatched with
// direct addressing.  The HID report is only served when a mode strap says
// so.
Fixture storage(const FixtureSpec& spec) {
  const uint16_t ep0 = spec.ep0.value_or(0xf1dc);
  const uint16_t ep1 = static_cast<uint16_t>(ep0 + 0x40);
  const uint16_t cfg_buf = spec.split_ep0 ? static_cast<uint16_t>(ep0 + 0x80) : ep0;

  Source s;
  s("; mass-storage controller firmware");
  s("        .equ EP0FIFO, 0x%04X", ep0);
  s("        .equ CFGFIFO, 0x%04X", cfg_buf);
  s("        .equ EP1FIFO, 0x%04X", ep1);
  s("        .equ EP0LEN, 0xF1D0");
  s("        .equ EP0CTL, 0xF1D1");
  s("        .equ EP1LEN, 0xF1D2");
  s("        .equ USBSTAT, 0xF1C0");
  s("        .equ SETUP_BASE, 0xF1E0");
  s("        .equ MODE_STRAP, 0xF0A0");
  s("        .equ OUTBUF, 0xF000");
  s("        .equ S_TYPE, 0x48");
  s("        .equ S_REQ, 0x49");
  s("        .equ S_VALL, 0x4A");
  s("        .equ S_VALH, 0x4B");
  s("        .equ S_IDXL, 0x4C");
  vectors(s, "usb_isr", nullptr);

  s("        .org 0x0030");
  s("main:   MOV SP,#0x5F");
  s("        MOV IE,#0x81");
  s("idle:   SJMP idle");

  s("        .org 0x0040");
  s("usb_isr:");
  isr_prologue(s);
  s("        PUSH 0x00");
  s("        MOV DPTR,#USBSTAT");
  s("        MOVX A,@DPTR");
  s("        JNB ACC.0,usb_bulk");
  s("        MOV DPTR,#SETUP_BASE");
  s("        MOV R0,#S_TYPE");
  s("su_copy:");
  s("        MOVX A,@DPTR");
  s("        MOV @R0,A");
  s("        INC DPTR");
  s("        INC R0");
  s("        CJNE R0,#0x50,su_copy");
  s("        LCALL setup");
  s("        SJMP usb_done");
  s("usb_bulk:");
  s("        JNB ACC.1,usb_done");
  s("        LCALL bulk_out");
  s("usb_done:");
  s("        POP 0x00");
  isr_epilogue(s);

  s("        .org 0x0100");
  s("setup:  MOV A,S_REQ");
  s("        CJNE A,#0x05,st_5");
  s("        SJMP st_ack");
  s("st_5:   CJNE A,#0x06,st_6");
  s("        LJMP get_descriptor");
  s("st_6:   CJNE A,#0x09,st_9");
  s("        MOV A,S_VALL");
  s("        CJNE A,#0x02,st_ack");
  s("        SJMP st_stall");
  s("st_9:   CJNE A,#0xFE,st_stall");
  s("        MOV DPTR,#EP0FIFO");
  s("        CLR A");
  s("        MOVX @DPTR,A");
  s("        SJMP st_ack");
  s("st_stall:");
  s("        MOV DPTR,#EP0CTL");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("        RET");
  s("st_ack: MOV DPTR,#EP0CTL");
  s("        MOV A,#0x02");
  s("        MOVX @DPTR,A");
  s("        RET");

  s("get_descriptor:");
  s("        MOV A,S_VALH");
  s("        CJNE A,#0x01,gd_1");
  s("        LCALL copy_dev");
  s("        SJMP st_ack");
  s("gd_1:   CJNE A,#0x02,gd_2");
  s("        LCALL copy_cfg");
  s("        SJMP st_ack");
  s("gd_2:   CJNE A,#0x22,st_stall");
  s("        MOV DPTR,#MODE_STRAP");
  s("        MOVX A,@DPTR");
  s("        JZ st_stall");
  s("        MOV A,S_IDXL");
  s("        JNZ st_stall");
  s("        LCALL copy_report");
  s("        SJMP st_ack");

  // Bulk-only transport: check the CBW signature, answer with a CSW that
  // echoes the tag.
  s("        .org 0x0200");
  s("bulk_out:");
  s("        MOV R7,#0");
  s("cbw_loop:");
  s("        MOV A,R7");
  s("        MOV DPTR,#cbw_sig");
  s("        MOVC A,@A+DPTR");
  s("        MOV B,A");
  s("        MOV A,R7");
  s("        ADD A,#low(OUTBUF)");
  s("        MOV DPL,A");
  s("        MOV DPH,#high(OUTBUF)");
  s("        MOVX A,@DPTR");
  s("        CJNE A,B,cbw_bad");
  s("        INC R7");
  s("        CJNE R7,#4,cbw_loop");
  s("        MOV R7,#0");
  s("csw_loop:");
  s("        MOV A,R7");
  s("        MOV DPTR,#csw_sig");
  s("        MOVC A,@A+DPTR");
  s("        MOV DPTR,#EP1FIFO");
  s("csw_st: MOVX @DPTR,A");
  s("        INC R7");
  s("        CJNE R7,#4,csw_loop");
  s("tag_loop:");
  s("        MOV A,R7");
  s("        ADD A,#low(OUTBUF)");
  s("        MOV DPL,A");
  s("        MOV DPH,#high(OUTBUF)");
  s("        MOVX A,@DPTR");
  s("        MOV DPTR,#EP1FIFO");
  s("tag_st: MOVX @DPTR,A");
  s("        INC R7");
  s("        CJNE R7,#8,tag_loop");
  s("        MOV DPTR,#EP1LEN");
  s("        MOV A,#0x0D");
  s("        MOVX @DPTR,A");
  s("cbw_bad:");
  s("        RET");

  copy_routine(s, "copy_dev", 0x0B86, "dev_desc", 18, "EP0FIFO", "EP0LEN");
  copy_routine(s, "copy_cfg", 0x0BD2, "cfg_desc", 32, "CFGFIFO", "EP0LEN");
  copy_routine(s, "copy_report", 0x0BEE, "report_desc", static_cast<uint32_t>(kKeyboardReport.size()),
               "EP0FIFO", "EP0LEN");

  s("        .org 0x302B");
  s("dev_desc:");
  s.bytes({0x12, 0x01, 0x00, 0x02, 0x00, 0x00, 0x00, 0x40, 0xFE, 0x13, 0x03, 0x51, 0x00, 0x01, 0x01, 0x02,
           0x03, 0x01});
  s("cfg_desc:");
  s.bytes({0x09, 0x02, 0x20, 0x00, 0x01, 0x01, 0x00, 0x80, 0x32});
  s.bytes({0x09, 0x04, 0x00, 0x00, 0x02, 0x08, 0x06, 0x50, 0x00});
  s.bytes({0x07, 0x05, 0x81, 0x02, 0x40, 0x00, 0x00});
  s.bytes({0x07, 0x05, 0x02, 0x02, 0x40, 0x00, 0x00});
  s("str0:");
  s.bytes({0x04, 0x03, 0x09, 0x04});
  s("        .org 0x3084");
  s("report_desc:");
  s.bytes(kKeyboardReport);
  s("cbw_sig:");
  s("        .db \"USBC\"");
  s("csw_sig:");
  s("        .db \"USBS\"");

  Fixture f;
  f.source = s.text();
  const Assembly a = assemble(f.source);
  f.image = a.image;
  Manifest& m = f.manifest;
  m.template_name = std::string(template_name(Template::StorageClaimingHid));
  m.expected_class = "mass-storage";
  m.descriptors = {{"DEVICE_DESC", a.at("dev_desc")}, {"CONFIG_DESC", a.at("cfg_desc")},
                   {"HID_REPORT", a.at("report_desc")}, {"MASS_STORAGE_CBW", a.at("cbw_sig")}};
  m.xrefs = {{"DEVICE_DESC", {a.at("copy_dev_ref")}}, {"CONFIG_DESC", {a.at("copy_cfg_ref")}},
             {"HID_REPORT", {a.at("copy_report_ref")}}};
  m.ep0 = ep0;
  m.endpoints = {ep1};
  m.query1_targets = {a.at("copy_report_st")};
  m.descriptor_copy_site = a.at("copy_report_st");
  m.copy_sites = {a.at("copy_dev_st"), a.at("copy_cfg_st"), a.at("copy_report_st")};
  m.benign_site = a.at("tag_st");
  for (uint16_t x = 0xf1e0; x < 0xf1e8; ++x) m.environment.push_back(xram(x));
  m.environment.push_back(xram(0xf1c0));
  m.environment.push_back(xram(0xf0a0));
  for (uint16_t x = 0xf000; x < 0xf008; ++x) m.environment.push_back(xram(x));
  m.setup = {{"bmRequestType", xram(0xf1e0)}, {"bRequest", xram(0xf1e1)}, {"wValueL", xram(0xf1e2)},
             {"wValueH", xram(0xf1e3)}, {"wIndexL", xram(0xf1e4)}, {"irq", xram(0xf1c0)}};
  m.instruction_count = a.instructions.size();
  return f;
}

Fixture straightline() {
  Source s;
  for (int i = 0; i < 10; ++i) s("        NOP");
  s("halt:   SJMP halt");
  Fixture f;
  f.source = s.text();
  const Assembly a = assemble(f.source);
  f.image = a.image;
  f.manifest.template_name = std::string(template_name(Template::Straightline));
  f.manifest.expected_class = "unknown";
  f.manifest.instruction_count = a.instructions.size();
  return f;
}

// An ISR whose target sits behind `depth` chained compares against bytes
// that only the environment provides.
Fixture branchy(const FixtureSpec& spec) {
  static const std::vector<std::pair<uint16_t, uint8_t>> guards = {
      {0x7fe9, 0x06}, {0x7feb, 0x22}, {0x7fea, 0x01}, {0x7fe8, 0x81}, {0x7fee, 0x40}};
  if (spec.guard_depth == 0 || spec.guard_depth > guards.size())
    throw std::invalid_argument("guard depth must be in 1..5");
  Source s;
  s("; interrupt-driven fixture with chained environment guards");
  s("        .equ RESULT, 0x7F00");
  vectors(s, "isr", nullptr);
  s("        .org 0x0030");
  s("main:   MOV SP,#0x5F");
  s("        MOV IE,#0x81");
  s("idle:   SJMP idle");
  s("isr:    PUSH ACC");
  s("        PUSH DPL");
  s("        PUSH DPH");
  s("        PUSH PSW");
  for (unsigned i = 0; i < spec.guard_depth; ++i) {
    s("        MOV DPTR,#0x%04X", guards[i].first);
    s("        MOVX A,@DPTR");
    s("        CJNE A,#0x%02X,isr_out", guards[i].second);
  }
  s("target: MOV DPTR,#RESULT");
  s("        MOV A,#0x01");
  s("        MOVX @DPTR,A");
  s("isr_out:");
  s("        POP PSW");
  s("        POP DPH");
  s("        POP DPL");
  s("        POP ACC");
  s("        RETI");
  Fixture f;
  f.source = s.text();
  const Assembly a = assemble(f.source);
  f.image = a.image;
  Manifest& m = f.manifest;
  m.template_name = std::string(template_name(Template::Branchy));
  m.expected_class = "unknown";
  m.target = a.at("target");
  m.query1_targets = {a.at("target")};
  for (unsigned i = 0; i < spec.guard_depth; ++i) m.environment.push_back(xram(guards[i].first));
  m.instruction_count = a.instructions.size();
  return f;
}

json loc_list(const std::vector<Location>& v) {
  json j = json::array();
  for (const auto& l : v) j.push_back(symexec::location_name(l));
  return j;
}

std::vector<Location> parse_locs(const json& j) {
  std::vector<Location> out;
  for (const auto& x : j) {
    auto l = symexec::parse_location(x.get<std::string>());
    if (!l) throw std::invalid_argument("bad location " + x.get<std::string>());
    out.push_back(*l);
  }
  return out;
}

json addr_list(const std::vector<uint16_t>& v) {
  json j = json::array();
  for (auto a : v) j.push_back(hex16(a));
  return j;
}

std::vector<uint16_t> parse_addrs(const json& j) {
  std::vector<uint16_t> out;
  for (const auto& x : j) out.push_back(parse_hex(x));
  return out;
}

}  // namespace

std::string_view template_name(Template t) {
  switch (t) {
    case Template::BenignHid: return "benign-hid";
    case Template::InjectorHid: return "injector-hid";
    case Template::StorageClaimingHid: return "storage-claiming-hid";
    case Template::Straightline: return "straightline";
    case Template::Branchy: return "branchy";
  }
  return "?";
}

std::optional<Template> template_from_name(std::string_view name) {
  for (auto t : {Template::BenignHid, Template::InjectorHid, Template::StorageClaimingHid, Template::Straightline,
                 Template::Branchy})
    if (template_name(t) == name) return t;
  return std::nullopt;
}

Fixture generate_fixture(const FixtureSpec& spec) {
  switch (spec.kind) {
    case Template::BenignHid: return ezhid(spec, false);
    case Template::InjectorHid: return ezhid(spec, true);
    case Template::StorageClaimingHid: return storage(spec);
    case Template::Straightline: return straightline();
    case Template::Branchy: return branchy(spec);
  }
  throw std::invalid_argument("unknown fixture template");
}

json Manifest::to_json() const {
  json j;
  j["template"] = template_name;
  j["expected_class"] = expected_class;
  json d = json::object();
  for (const auto& [k, v] : descriptors) d[k] = hex16(v);
  j["descriptors"] = d;
  json x = json::object();
  for (const auto& [k, v] : xrefs) x[k] = addr_list(v);
  j["xrefs"] = x;
  j["ep0"] = ep0 ? json(hex16(*ep0)) : json(nullptr);
  j["endpoints"] = addr_list(endpoints);
  j["query1_targets"] = addr_list(query1_targets);
  j["descriptor_copy_site"] = descriptor_copy_site ? json(hex16(*descriptor_copy_site)) : json(nullptr);
  j["copy_sites"] = addr_list(copy_sites);
  j["counters"] = loc_list(counters);
  j["environment"] = loc_list(environment);
  j["malicious_site"] = malicious_site ? json(hex16(*malicious_site)) : json(nullptr);
  j["malicious_address"] = malicious_address ? json(hex16(*malicious_address)) : json(nullptr);
  json mv = json::array();
  for (auto v : malicious_values) mv.push_back(v);
  j["malicious_values"] = mv;
  j["benign_site"] = benign_site ? json(hex16(*benign_site)) : json(nullptr);
  json s = json::object();
  for (const auto& [k, v] : setup) s[k] = symexec::location_name(v);
  j["setup"] = s;
  j["target"] = target ? json(hex16(*target)) : json(nullptr);
  j["instruction_count"] = instruction_count;
  return j;
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  auto opt = [&](const char* key) -> std::optional<uint16_t> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return parse_hex(j[key]);
  };
  m.template_name = j.at("template").get<std::string>();
  m.expected_class = j.at("expected_class").get<std::string>();
  for (const auto& [k, v] : j.at("descriptors").items()) m.descriptors[k] = parse_hex(v);
  for (const auto& [k, v] : j.at("xrefs").items()) m.xrefs[k] = parse_addrs(v);
  m.ep0 = opt("ep0");
  m.endpoints = parse_addrs(j.at("endpoints"));
  m.query1_targets = parse_addrs(j.at("query1_targets"));
  m.descriptor_copy_site = opt("descriptor_copy_site");
  m.copy_sites = parse_addrs(j.at("copy_sites"));
  m.counters = parse_locs(j.at("counters"));
  m.environment = parse_locs(j.at("environment"));
  m.malicious_site = opt("malicious_site");
  m.malicious_address = opt("malicious_address");
  for (const auto& v : j.at("malicious_values")) m.malicious_values.push_back(v.get<uint8_t>());
  m.benign_site = opt("benign_site");
  for (const auto& [k, v] : j.at("setup").items()) {
    auto l = symexec::parse_location(v.get<std::string>());
    if (!l) throw std::invalid_argument("bad setup location");
    m.setup[k] = *l;
  }
  m.target = opt("target");
  m.instruction_count = j.at("instruction_count").get<size_t>();
  return m;
}

}  // namespace fwscope::fwkit
