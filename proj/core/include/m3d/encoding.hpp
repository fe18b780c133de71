// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "m3d/types.hpp"

namespace m3d {

std::string base64_encode(std::string_view bytes);

/// URL form of an image for wire payloads. Paths are read and inlined as a
/// data URI, URLs pass through, and bare "base64:<payload>" gets a JPEG
/// data-URI prefix. Throws InputError for absent or unreadable images.
std::string image_to_url(const ImageRef& image);

/// Truncates to at most `cap` bytes (on a UTF-8 boundary) and appends
/// `marker` when anything was cut.
std::string truncate_with_marker(std::string text, std::size_t cap,
                                 std::string_view marker = " ...[truncated]");

}  // namespace m3d
