#pragma once

#include "dehomo/dehomogenizer.hpp"

#include <filesystem>

namespace dehomo {

/// Element densities as grayscale squares, black solid.
void render_density(const std::filesystem::path& file, const ProblemDefinition& problem,
                    const DesignField& design);

/// Domain outline with u lines in red and v lines in blue.
void render_streamlines(const std::filesystem::path& file,
                        const std::vector<std::vector<Vec2>>& boundary,
                        std::span<const Streamline> lines);

/// Wireframe: one line per mesh edge and one dot per mesh node.
void render_mesh(const std::filesystem::path& file, const QuadDominantMesh& mesh,
                 const std::vector<std::vector<Vec2>>& boundary);

/// Solid pixels as horizontal runs on a white background.
void render_layout(const std::filesystem::path& file, const BinaryLayout& layout);

}  // namespace dehomo
