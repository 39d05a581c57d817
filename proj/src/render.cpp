#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>

#include "marlsim/errors.hpp"
#include "marlsim/trace.hpp"

namespace marlsim {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string path_data(const Viewport& vp, const std::vector<Vec2>& pts) {
  std::string d;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2 p = vp.to_view(pts[i]);
    d += (i == 0 ? "M" : " L") + num(p.x) + " " + num(p.y);
  }
  return d;
}

}  // namespace

Viewport make_viewport(const Scenario& sc, const RenderOptions& opt) {
  double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
  double max_x = -min_x, max_y = -min_x;
  for (const auto& lane : sc.lanes) {
    for (const auto& p : lane.centerline) {
      min_x = std::min(min_x, p.x - lane.width);
      max_x = std::max(max_x, p.x + lane.width);
      min_y = std::min(min_y, p.y - lane.width);
      max_y = std::max(max_y, p.y + lane.width);
    }
  }
  Viewport vp;
  vp.min_x = min_x;
  vp.max_y = max_y;
  vp.scale = opt.pixels_per_meter;
  vp.margin = opt.margin_m * opt.pixels_per_meter;
  vp.width = (max_x - min_x) * vp.scale + 2.0 * vp.margin;
  vp.height = (max_y - min_y) * vp.scale + 2.0 * vp.margin;
  return vp;
}

std::string render_svg(const Scenario& sc, std::span<const StepTrace> episode, const RenderOptions& opt) {
  if (episode.empty()) throw std::invalid_argument("render_svg: empty trace");
  const std::int64_t ep = episode.front().episode_id;
  for (const auto& t : episode) {
    if (t.episode_id != ep) throw std::invalid_argument("render_svg: traces span more than one episode");
  }
  const Viewport vp = make_viewport(sc, opt);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(vp.width) << " " << num(vp.height)
     << "\" width=\"" << num(vp.width) << "\" height=\"" << num(vp.height) << "\">\n";
  os << "<title>" << sc.name << " episode " << ep << "</title>\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << num(vp.width) << "\" height=\"" << num(vp.height)
     << "\" fill=\"white\"/>\n";

  for (const auto& lane : sc.lanes) {
    os << "<path class=\"lane-band\" d=\"" << path_data(vp, lane.centerline)
       << "\" fill=\"none\" stroke=\"#e0e0e0\" stroke-linejoin=\"round\" stroke-width=\""
       << num(lane.width * vp.scale) << "\"/>\n";
  }
  for (const auto& lane : sc.lanes) {
    os << "<path class=\"lane\" data-lane=\"" << lane.id << "\" d=\"" << path_data(vp, lane.centerline)
       << "\" fill=\"none\" stroke=\"#808080\" stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n";
  }

  const std::size_t n_agents = episode.front().agents.size();
  const double point_r = 0.5 * vp.scale;

  // Policy-input waypoints.
  for (const auto& t : episode) {
    for (std::size_t i = 0; i < t.agents.size(); ++i) {
      const AgentTrace& a = t.agents[i];
      if (!a.acted) continue;
      for (const auto& w : a.waypoints) {
        if (!w) continue;
        const Vec2 p = vp.to_view(*w);
        os << "<circle class=\"waypoint\" data-agent=\"" << i << "\" data-step=\"" << t.step << "\" cx=\""
           << num(p.x) << "\" cy=\"" << num(p.y) << "\" r=\"" << num(0.4 * point_r) << "\" fill=\"blue\"/>\n";
      }
    }
  }

  // Trajectories of the controlled (red) cars.
  for (std::size_t i = 0; i < n_agents; ++i) {
    std::vector<Vec2> pts;
    for (const auto& t : episode) {
      if (i < t.agents.size() && t.agents[i].acted) pts.push_back({t.agents[i].x, t.agents[i].y});
    }
    if (pts.empty()) continue;
    if (pts.size() == 1) {
      const Vec2 p = vp.to_view(pts.front());
      os << "<circle class=\"agent-point\" data-agent=\"" << i << "\" cx=\"" << num(p.x) << "\" cy=\"" << num(p.y)
         << "\" r=\"" << num(point_r) << "\" fill=\"red\"/>\n";
    } else {
      os << "<path class=\"trajectory\" data-agent=\"" << i << "\" d=\"" << path_data(vp, pts)
         << "\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n";
    }
  }

  const double arm = 1.5 * vp.scale;
  for (const auto& t : episode) {
    for (std::size_t i = 0; i < t.agents.size(); ++i) {
      const AgentTrace& a = t.agents[i];
      if (!a.acted || !a.events.collision) continue;
      const Vec2 p = vp.to_view(a.end);
      os << "<path class=\"collision\" data-agent=\"" << i << "\" d=\"M" << num(p.x - arm) << " " << num(p.y - arm)
         << " L" << num(p.x + arm) << " " << num(p.y + arm) << " M" << num(p.x - arm) << " " << num(p.y + arm)
         << " L" << num(p.x + arm) << " " << num(p.y - arm) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace marlsim
