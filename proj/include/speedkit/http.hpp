// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single include point for the vendored cpp-httplib so every TU agrees on
// configuration. The default listen backlog (5) drops SYNs when hundreds
// of benchmark connections open at once.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 1024
#endif

#include <httplib.h>
