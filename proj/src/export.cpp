#include <charconv>
#include <fstream>
#include <sstream>

#include "rehab/harness.hpp"

namespace rehab::harness {

namespace {

void append_vec(std::string& out, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out += ',';
    out += format_double(v[i]);
  }
}

void append_names(std::string& out, const char* base, int dof) {
  for (int i = 0; i < dof; ++i) {
    out += ',';
    out += base;
    out += '_';
    out += std::to_string(i);
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_header(int dof) {
  std::string h = "t";
  for (const char* base : {"q", "qd", "qdd", "q_ref", "u", "u_ctc", "u_pd", "u_gp", "y", "mu"})
    append_names(h, base, dof);
  h += ",task_error,joint_error,update_us,predict_us\n";
  return h;
}

std::string run_csv(const RunLog& log) {
  std::string out = csv_header(log.dof);
  for (const auto& r : log.records) {
    out += format_double(r.t);
    for (const Vec* v : {&r.q, &r.qd, &r.qdd, &r.q_ref, &r.u, &r.u_ctc, &r.u_pd, &r.u_ff, &r.y, &r.mu})
      append_vec(out, *v);
    for (double v : {r.task_error, r.joint_error, r.update_us, r.predict_us}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace rehab::harness
