// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/encoding.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "m3d/errors.hpp"

namespace m3d {

std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  const auto rest = bytes.size() - i;
  if (rest == 1) {
    const auto n = static_cast<unsigned char>(bytes[i]) << 16;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

namespace {

std::string mime_for_path(const std::string& path) {
  auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == "png") return "image/png";
  if (ext == "gif") return "image/gif";
  if (ext == "webp") return "image/webp";
  if (ext == "bmp") return "image/bmp";
  return "image/jpeg";
}

}  // namespace

std::string image_to_url(const ImageRef& image) {
  switch (image.kind) {
    case ImageRef::Kind::Absent:
      throw InputError("image is absent");
    case ImageRef::Kind::Url:
      return image.value;
    case ImageRef::Kind::Base64: {
      constexpr std::string_view kBare = "base64:";
      if (image.value.size() >= kBare.size() &&
          std::equal(kBare.begin(), kBare.end(), image.value.begin(),
                     [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); })) {
        return "data:image/jpeg;base64," + image.value.substr(kBare.size());
      }
      return image.value;
    }
    case ImageRef::Kind::Path: {
      std::ifstream in(image.value, std::ios::binary);
      if (!in) throw InputError("cannot read image file: " + image.value);
      std::ostringstream buf;
      buf << in.rdbuf();
      return "data:" + mime_for_path(image.value) + ";base64," + base64_encode(buf.str());
    }
  }
  throw InputError("unknown image kind");
}

std::string truncate_with_marker(std::string text, std::size_t cap, std::string_view marker) {
  if (text.size() <= cap) return text;
  std::size_t cut = cap;
  // Back off continuation bytes so we never split a UTF-8 sequence.
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  text.resize(cut);
  text += marker;
  return text;
}

}  // namespace m3d
