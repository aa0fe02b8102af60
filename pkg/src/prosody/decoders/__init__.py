#!env python3
# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Regression, normalizing-flow and diffusion decoders for one-to-many prosody prediction.

The package trains the three decoder families on a synthetic (log-f0, duration)
corpus whose conditional distribution is known, and compares their outputs
with pooled standard deviations and Jensen-Shannon divergences.
"""

__version__ = "0.1.0"
